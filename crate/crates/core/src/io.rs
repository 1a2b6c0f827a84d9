//! CSV and JSON files: training sets, quadratic descriptors, and the number
//! format shared by every CSV the crate writes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::objective::{ObjectiveError, QuadraticDescriptor, QuadraticProblem, TrainingSet};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

/// 17 significant digits; parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn create_file(path: &Path) -> Result<BufWriter<File>, IoError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| IoError::File {
            path: path.display().to_string(),
            source,
        })
}

fn open_file(path: &Path) -> Result<BufReader<File>, IoError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| IoError::File {
            path: path.display().to_string(),
            source,
        })
}

/// Header `x_1,…,x_n,y`, one row per pair.
pub fn write_training_set<W: Write>(set: &TrainingSet, out: W) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=set.dim()).map(|i| format!("x_{i}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for (x, y) in set.iter() {
        let mut row: Vec<String> = x.iter().map(|v| fmt_f64(*v)).collect();
        row.push(if y > 0.0 { "1" } else { "-1" }.into());
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_training_set<R: Read>(input: R) -> Result<TrainingSet, IoError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let cols = header.len();
    if cols < 2 || header.get(cols - 1).map(str::trim) != Some("y") {
        return Err(IoError::Format(
            "training set header must be x_1,...,x_n,y".into(),
        ));
    }
    let dim = cols - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        for field in rec.iter().take(dim) {
            let v: f64 = field.trim().parse().map_err(|_| {
                IoError::Format(format!("line {line}: bad feature value `{field}`"))
            })?;
            features.push(v);
        }
        let y = rec.get(dim).unwrap_or_default().trim();
        let y: f64 = y
            .parse()
            .map_err(|_| IoError::Format(format!("line {line}: bad label `{y}`")))?;
        labels.push(y);
    }
    Ok(TrainingSet::new(dim, features, labels)?)
}

pub fn save_training_set(set: &TrainingSet, path: &Path) -> Result<(), IoError> {
    write_training_set(set, create_file(path)?)
}

pub fn load_training_set(path: &Path) -> Result<TrainingSet, IoError> {
    read_training_set(open_file(path)?)
}

/// Pretty JSON descriptor followed by a newline.
pub fn write_quadratic<W: Write>(problem: &QuadraticProblem, mut out: W) -> Result<(), IoError> {
    serde_json::to_writer_pretty(&mut out, &problem.descriptor())?;
    out.write_all(b"\n")
        .and_then(|_| out.flush())
        .map_err(|source| IoError::File {
            path: "<output>".into(),
            source,
        })
}

pub fn save_quadratic(problem: &QuadraticProblem, path: &Path) -> Result<(), IoError> {
    write_quadratic(problem, create_file(path)?).map_err(|e| match e {
        IoError::File { source, .. } => IoError::File {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

pub fn load_quadratic(path: &Path) -> Result<QuadraticProblem, IoError> {
    let d: QuadraticDescriptor = serde_json::from_reader(open_file(path)?)?;
    Ok(QuadraticProblem::from_descriptor(&d)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::generate_svm_data;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;

    #[test]
    fn training_set_csv_round_trip() {
        let mut rng = rng_from_seed(21);
        let set = generate_svm_data(3, 20, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_training_set(&set, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x_1,x_2,x_3,y\n"));
        assert_eq!(read_training_set(buf.as_slice()).unwrap(), set);
    }

    #[test]
    fn bad_training_files_are_rejected() {
        assert!(read_training_set("a,b\n1,1\n".as_bytes()).is_err());
        assert!(read_training_set("x_1,y\n0.5,2\n".as_bytes()).is_err());
        assert!(read_training_set("x_1,y\nfoo,1\n".as_bytes()).is_err());
        assert!(read_training_set("x_1,y\n".as_bytes()).is_err());
    }

    #[test]
    fn quadratic_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.json");
        let p = QuadraticProblem::generate_seeded(
            4,
            crate::objective::DiagonalDistribution::Uniform,
            0.3,
            8,
        )
        .unwrap();
        save_quadratic(&p, &path).unwrap();
        assert_eq!(load_quadratic(&path).unwrap(), p);
    }

    proptest! {
        #[test]
        fn formatted_floats_round_trip(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
            let s = fmt_f64(x);
            prop_assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }
}
