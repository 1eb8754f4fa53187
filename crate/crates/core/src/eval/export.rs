use std::path::Path;

use super::EvalError;
use crate::autodiff::Tensor;
use crate::signal::Label;

/// Writes `B×T×d` embeddings as CSV, one row per step:
/// `seq_id,t,label,dim_0,..`. Values carry 17 significant digits so they
/// parse back to the same f64. Unlabelled steps leave `label` empty.
pub fn export_embeddings(z: &Tensor, labels: Option<&[Label]>, path: &Path) -> Result<(), EvalError> {
    let (b, t, d) = match z.shape() {
        [b, t, d] => (*b, *t, *d),
        s => return Err(EvalError::Dimension(format!("expected B×T×d embeddings, got {s:?}"))),
    };
    if let Some(l) = labels {
        if l.len() != b * t {
            return Err(EvalError::Dimension(format!("{} labels for {} steps", l.len(), b * t)));
        }
    }
    let io = |e: csv::Error| EvalError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec!["seq_id".to_string(), "t".into(), "label".into()];
    header.extend((0..d).map(|j| format!("dim_{j}")));
    w.write_record(&header).map_err(io)?;
    let mut rec = Vec::with_capacity(d + 3);
    for s in 0..b {
        for step in 0..t {
            let i = s * t + step;
            rec.clear();
            rec.push(s.to_string());
            rec.push(step.to_string());
            rec.push(labels.map(|l| l[i].to_string()).unwrap_or_default());
            rec.extend(z.data()[i * d..(i + 1) * d].iter().map(|v| format!("{v:.16e}")));
            w.write_record(&rec).map_err(io)?;
        }
    }
    w.flush().map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.csv");
        let data: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin() / 3.0).collect();
        let z = Tensor::new(vec![2, 3, 2], data.clone()).unwrap();
        export_embeddings(&z, Some(&[0, 0, 1, 1, 2, 2]), &path).unwrap();
        let mut r = csv::Reader::from_path(&path).unwrap();
        assert_eq!(r.headers().unwrap().len(), 5);
        let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
        assert_eq!(rows.len(), 6);
        let back: Vec<f64> = rows.iter().flat_map(|r| (3..5).map(|j| r[j].parse::<f64>().unwrap()).collect::<Vec<_>>()).collect();
        assert_eq!(back, data);
        assert_eq!(&rows[5][0], "1");
        assert_eq!(&rows[5][1], "2");
        assert_eq!(&rows[5][2], "2");
    }

    #[test]
    fn empty_batch_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.csv");
        export_embeddings(&Tensor::zeros(&[0, 4, 3]), None, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "seq_id,t,label,dim_0,dim_1,dim_2\n");
    }
}
