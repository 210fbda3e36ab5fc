//! Ensemble snapshot CSV: one row per particle, columns `u_1..u_p[,A_1..A_d]`.

use std::io::{Read, Write};

use super::Ensemble;
use crate::error::{Error, Result};

pub fn write_snapshot<W: Write>(ensemble: &Ensemble, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let p = ensemble.dim();
    let d = ensemble.feature_dim().unwrap_or(0);
    let header: Vec<String> = (1..=p).map(|k| format!("u_{k}")).chain((1..=d).map(|k| format!("A_{k}"))).collect();
    w.write_record(&header)?;
    for i in 0..ensemble.size() {
        let mut row: Vec<String> = ensemble.particle(i).iter().map(|v| v.to_string()).collect();
        if d > 0 {
            row.extend(ensemble.feature(i)?.iter().map(|v| v.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// A parsed snapshot. Feature columns are returned separately because the
/// ensemble's cache is only ever filled by evaluating a forward map.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub ensemble: Ensemble,
    pub features: Option<Vec<Vec<f64>>>,
}

pub fn read_snapshot<R: Read>(input: R) -> Result<Snapshot> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = r.headers()?.clone();
    let p = headers.iter().filter(|h| h.starts_with("u_")).count();
    let d = headers.iter().filter(|h| h.starts_with("A_")).count();
    if p == 0 || p + d != headers.len() {
        return Err(Error::InvalidInput(format!("unexpected snapshot header: {:?}", headers)));
    }
    let mut flat = Vec::new();
    let mut feats = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::InvalidInput(format!("bad number {s:?}: {e}"))))
            .collect::<Result<_>>()?;
        flat.extend_from_slice(&vals[..p]);
        if d > 0 {
            feats.push(vals[p..].to_vec());
        }
    }
    Ok(Snapshot { ensemble: Ensemble::from_flat(p, flat)?, features: (d > 0).then_some(feats) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::FnMap;
    use proptest::prelude::*;

    #[test]
    fn header_and_layout() {
        let e = Ensemble::from_rows(vec![vec![1.0, 2.5], vec![-0.5, 3.0]])
            .unwrap()
            .evaluate(&FnMap::new(2, 1, |u, o| o[0] = u[0] + u[1]))
            .unwrap();
        let mut buf = Vec::new();
        write_snapshot(&e, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "u_1,u_2,A_1\n1,2.5,3.5\n-0.5,3,2.5\n");
    }

    proptest! {
        #[test]
        fn roundtrip_is_exact(rows in prop::collection::vec(prop::collection::vec(-1e6..1e6f64, 3), 2..10)) {
            let e = Ensemble::from_rows(rows).unwrap();
            let mut buf = Vec::new();
            write_snapshot(&e, &mut buf).unwrap();
            let back = read_snapshot(buf.as_slice()).unwrap();
            prop_assert_eq!(back.ensemble, e);
            prop_assert!(back.features.is_none());
        }
    }
}
