//! Line-delimited JSON run records.
//!
//! One record per line. Non-finite reals are written as the strings
//! `"inf"`, `"-inf"` and `"nan"`; finite reals as JSON numbers that parse
//! back to the same bits.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolve::RunResult;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

mod real {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    struct RealVisitor;

    impl Visitor<'_> for RealVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(RealVisitor)
    }

    pub mod vec {
        use serde::de::{Deserializer, SeqAccess, Visitor};
        use serde::ser::{SerializeSeq, Serializer};
        use std::fmt;

        #[derive(serde::Serialize, serde::Deserialize)]
        struct Wrap(#[serde(with = "super")] f64);

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for x in v {
                seq.serialize_element(&Wrap(*x))?;
            }
            seq.end()
        }

        struct SeqVisitor;

        impl<'de> Visitor<'de> for SeqVisitor {
            type Value = Vec<f64>;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a list of reals")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Vec<f64>, A::Error> {
                let mut out = Vec::new();
                while let Some(Wrap(x)) = seq.next_element()? {
                    out.push(x);
                }
                Ok(out)
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            d.deserialize_seq(SeqVisitor)
        }
    }
}

/// Outcome of one run, as persisted.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub codename: String,
    pub seed: u64,
    pub dataset: String,
    #[serde(with = "real")]
    pub train_r2: f64,
    #[serde(with = "real")]
    pub test_r2: f64,
    #[serde(with = "real")]
    pub lcf_ratio: f64,
    #[serde(with = "real")]
    pub mean_depth: f64,
    pub generations: usize,
    pub evaluations: usize,
    /// Best training R² so far, one entry per generation starting at 0.
    #[serde(with = "real::vec")]
    pub trace: Vec<f64>,
    /// Best model: intercept, coefficients and genes in tree text form.
    #[serde(with = "real")]
    pub c0: f64,
    #[serde(with = "real::vec")]
    pub c: Vec<f64>,
    pub genes: Vec<String>,
}

impl PartialEq for RunRecord {
    /// Bitwise on every real, so NaN equals NaN.
    fn eq(&self, other: &Self) -> bool {
        let same = |a: f64, b: f64| a.to_bits() == b.to_bits();
        let same_all = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| same(*x, *y));
        self.codename == other.codename
            && self.seed == other.seed
            && self.dataset == other.dataset
            && same(self.train_r2, other.train_r2)
            && same(self.test_r2, other.test_r2)
            && same(self.lcf_ratio, other.lcf_ratio)
            && same(self.mean_depth, other.mean_depth)
            && self.generations == other.generations
            && self.evaluations == other.evaluations
            && same_all(&self.trace, &other.trace)
            && same(self.c0, other.c0)
            && same_all(&self.c, &other.c)
            && self.genes == other.genes
    }
}

impl RunRecord {
    pub fn from_result(result: &RunResult, dataset: &str) -> Self {
        RunRecord {
            codename: result.mode.to_string(),
            seed: result.seed,
            dataset: dataset.to_string(),
            train_r2: result.train_r2,
            test_r2: result.test_r2,
            lcf_ratio: result.lcf_ratio,
            mean_depth: result.mean_depth,
            generations: result.generations,
            evaluations: result.history.last().map_or(0, |h| h.evaluations),
            trace: result.history.iter().map(|h| h.best_train_r2).collect(),
            c0: result.best.model.c0,
            c: result.best.model.c.clone(),
            genes: result.best.genes.iter().map(|g| g.root().to_string()).collect(),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("records always serialize")
    }

    pub fn from_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

/// Wall-clock time of one run, kept apart from the deterministic records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub codename: String,
    pub seed: u64,
    pub wall_secs: f64,
}

/// Appends one JSON line per value and flushes after each.
pub struct Appender {
    file: File,
}

impl Appender {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Appender { file })
    }

    pub fn append<T: Serialize>(&mut self, value: &T) -> std::io::Result<()> {
        let mut line = serde_json::to_string(value).map_err(std::io::Error::other)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()
    }
}

/// Reads every record of a file; blank lines are skipped.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, RecordError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(RunRecord::from_line(&line).map_err(|source| RecordError::Json { line: i + 1, source })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> RunRecord {
        RunRecord {
            codename: "UB".into(),
            seed: 7,
            dataset: "s2d".into(),
            train_r2: 0.999,
            test_r2: f64::NEG_INFINITY,
            lcf_ratio: 0.7,
            mean_depth: 3.5,
            generations: 2,
            evaluations: 300,
            trace: vec![0.5, f64::NAN, 0.999],
            c0: 0.1,
            c: vec![1.0, -2.0],
            genes: vec!["(lcf 1)".into(), "(sin (var 2))".into()],
        }
    }

    #[test]
    fn non_finite_survive() {
        let r = sample();
        let line = r.to_line();
        assert!(line.contains("\"-inf\"") && line.contains("\"nan\""));
        assert_eq!(RunRecord::from_line(&line).unwrap(), r);
    }

    #[test]
    fn rejects_garbage() {
        for bad in ["", "{}", "[1,2]", "{\"codename\":1}", "null"] {
            assert!(RunRecord::from_line(bad).is_err(), "{bad}");
        }
        let mut line = sample().to_line();
        line.insert_str(1, "\"extra\":1,");
        assert!(RunRecord::from_line(&line).is_err());
        let wrong = sample().to_line().replace("\"-inf\"", "\"minus\"");
        assert!(RunRecord::from_line(&wrong).is_err());
    }

    #[test]
    fn append_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.jsonl");
        let mut a = Appender::open(&path).unwrap();
        a.append(&sample()).unwrap();
        let mut second = sample();
        second.seed = 8;
        a.append(&second).unwrap();
        drop(a);
        assert_eq!(read_records(&path).unwrap(), vec![sample(), second]);
        std::fs::write(&path, "oops\n").unwrap();
        assert!(matches!(read_records(&path), Err(RecordError::Json { line: 1, .. })));
    }

    fn any_real() -> impl Strategy<Value = f64> {
        prop_oneof![
            8 => any::<f64>(),
            1 => Just(f64::INFINITY),
            1 => Just(f64::NEG_INFINITY),
            1 => Just(f64::NAN),
            1 => Just(-0.0),
        ]
    }

    proptest! {
        #[test]
        fn bit_exact_round_trip(
            train in any_real(),
            test in any_real(),
            trace in proptest::collection::vec(any_real(), 0..20),
            seed in any::<u64>(),
        ) {
            let mut r = sample();
            r.train_r2 = train;
            r.test_r2 = test;
            r.trace = trace;
            r.seed = seed;
            let back = RunRecord::from_line(&r.to_line()).unwrap();
            prop_assert_eq!(back, r);
        }
    }
}
