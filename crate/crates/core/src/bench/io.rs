//! Sequence directories: `spec.json` plus one directory per problem with
//! `problem.json` and `train.csv`, `val.csv`, `test.csv`.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::problem::{generate_problem, ProblemSpec};
use super::sequence::{check_pattern_fidelity, realize_sequence, SequenceSpec};
use crate::data::{DataBundle, Split, TaskKind};
use crate::error::{Error, Result};

pub fn problem_dir_name(index: usize) -> String {
    format!("problem_{:02}", index + 1)
}

/// Writes a split as CSV with header `x1_0.., [x2_0..,] y`.
pub fn write_split_csv(split: &Split, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let v = split.input_dim();
    let mut header: Vec<String> = (0..v).map(|i| format!("x1_{i}")).collect();
    if split.x2.is_some() {
        header.extend((0..v).map(|i| format!("x2_{i}")));
    }
    header.push("y".into());
    w.write_record(&header)?;
    for r in 0..split.len() {
        let mut rec: Vec<String> = split.x1.row(r).iter().map(|x| x.to_string()).collect();
        if let Some(x2) = &split.x2 {
            rec.extend(x2.row(r).iter().map(|x| x.to_string()));
        }
        rec.push(split.labels[r].to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_split_csv(path: &Path, task: TaskKind) -> Result<Split> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let cols = header.len();
    let pairs = task == TaskKind::Composite;
    let bad = |reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    if cols < 2 || header.get(cols - 1) != Some("y") || (pairs && (cols - 1) % 2 != 0) {
        return Err(bad("unexpected header".into()));
    }
    let v = if pairs { (cols - 1) / 2 } else { cols - 1 };
    let mut x1 = Vec::new();
    let mut x2 = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        for (i, field) in rec.iter().enumerate().take(cols - 1) {
            let value: f32 = field.parse().map_err(|_| bad(format!("bad number `{field}`")))?;
            if i < v {
                x1.push(value);
            } else {
                x2.push(value);
            }
        }
        labels.push(rec[cols - 1].parse::<u8>().map_err(|_| bad(format!("bad label `{}`", &rec[cols - 1])))?);
    }
    let n = labels.len();
    let x1 = Array2::from_shape_vec((n, v), x1).map_err(|e| bad(e.to_string()))?;
    let x2 = if pairs {
        Some(Array2::from_shape_vec((n, v), x2).map_err(|e| bad(e.to_string()))?)
    } else {
        None
    };
    Split::new(x1, x2, labels)
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Realises `seq` and writes every problem under `out_dir`.
pub fn write_sequence(seq: &SequenceSpec, out_dir: &Path) -> Result<Vec<ProblemSpec>> {
    let problems = realize_sequence(seq)?;
    check_pattern_fidelity(seq, &problems)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_json(seq, &out_dir.join("spec.json"))?;
    for p in &problems {
        let dir = out_dir.join(problem_dir_name(p.index));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let data = generate_problem(p)?;
        write_json(p, &dir.join("problem.json"))?;
        write_split_csv(&data.train, &dir.join("train.csv"))?;
        write_split_csv(&data.val, &dir.join("val.csv"))?;
        write_split_csv(&data.test, &dir.join("test.csv"))?;
    }
    Ok(problems)
}

/// Reads a sequence directory written by [`write_sequence`].
pub fn read_sequence(dir: &Path) -> Result<(SequenceSpec, Vec<(ProblemSpec, DataBundle)>)> {
    let spec_path = dir.join("spec.json");
    let seq: SequenceSpec =
        serde_json::from_slice(&fs::read(&spec_path).map_err(|e| Error::io(&spec_path, e))?)?;
    let mut out = Vec::new();
    for t in 0..seq.length() {
        let pdir = dir.join(problem_dir_name(t));
        let ppath = pdir.join("problem.json");
        let spec: ProblemSpec = serde_json::from_slice(&fs::read(&ppath).map_err(|e| Error::io(&ppath, e))?)?;
        let task = spec.task();
        let data = DataBundle {
            problem_id: spec.problem_id.clone(),
            task,
            train: read_split_csv(&pdir.join("train.csv"), task)?,
            val: read_split_csv(&pdir.join("val.csv"), task)?,
            test: read_split_csv(&pdir.join("test.csv"), task)?,
        };
        out.push((spec, data));
    }
    Ok((seq, out))
}
