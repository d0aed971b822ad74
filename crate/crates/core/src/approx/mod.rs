//! Value-function approximations: per-step linear combinations of basis
//! functions and per-step one-hidden-layer networks, with a flat CSV format
//! `(step, index, value)` for their parameters.

mod basis;
mod linear;
mod mlp;

use std::io::{Read, Write};

pub use basis::{gaussian_centers, place_gaussian_basis, BasisKind, BasisSet, CustomBasis, FeatureMap, Placement};
pub use linear::{sigma_transpose_times, GradientPolicy, LinearValueApprox, StepFit};
pub use mlp::{Mlp, MlpApprox};

use crate::error::{Error, Result};

/// Label of the scalar initial-value row in parameter files.
pub const INITIAL_VALUE_LABEL: &str = "y";

/// Write `(step, index, value)` rows; a `None` step is written as `y`.
pub fn write_param_csv<W, I>(writer: W, rows: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = (Option<usize>, usize, f64)>,
{
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["step", "index", "value"])?;
    for (step, index, value) in rows {
        let step = step.map_or_else(|| INITIAL_VALUE_LABEL.to_string(), |n| n.to_string());
        w.write_record([step, index.to_string(), format!("{value:e}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_param_csv<R: Read>(reader: R) -> Result<Vec<(Option<usize>, usize, f64)>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::invalid(format!("parameter row has {} fields, expected 3", rec.len())));
        }
        let parse_err = |what: &str| Error::invalid(format!("bad {what} in parameter row {:?}", rec));
        let step = match &rec[0] {
            INITIAL_VALUE_LABEL => None,
            s => Some(s.parse().map_err(|_| parse_err("step"))?),
        };
        let index = rec[1].parse().map_err(|_| parse_err("index"))?;
        let value = rec[2].parse().map_err(|_| parse_err("value"))?;
        out.push((step, index, value));
    }
    Ok(out)
}

impl MlpApprox {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_param_csv(writer, self.param_rows())
    }

    pub fn read_csv<R: Read>(reader: R, arch: Mlp, steps: usize) -> Result<Self> {
        let p = arch.n_params();
        let mut params = vec![f64::NAN; 1 + steps * p];
        for (step, index, value) in read_param_csv(reader)? {
            let slot = match step {
                None if index == 0 => 0,
                Some(n) if n < steps && index < p => 1 + n * p + index,
                _ => return Err(Error::invalid(format!("parameter ({step:?}, {index}) outside the architecture"))),
            };
            params[slot] = value;
        }
        if params.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("parameter file does not cover every parameter"));
        }
        Self::from_params(arch, steps, params)
    }
}

impl LinearValueApprox {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_param_csv(writer, self.coefficient_rows().map(|(n, k, a)| (Some(n), k, a)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_round_trip() {
        let approx = MlpApprox::new(Mlp::new(1, 4, 1), 3, 9, false);
        let mut buf = Vec::new();
        approx.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("step,index,value\ny,0,"));
        let back = MlpApprox::read_csv(buf.as_slice(), Mlp::new(1, 4, 1), 3).unwrap();
        assert_eq!(back, approx);
    }

    #[test]
    fn incomplete_file_rejected() {
        let text = "step,index,value\ny,0,1e0\n0,0,2e0\n";
        assert!(MlpApprox::read_csv(text.as_bytes(), Mlp::new(1, 1, 1), 1).is_err());
        let text = "step,index,value\nq,0,1e0\n";
        assert!(read_param_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn linear_coefficients_written() {
        let fit = StepFit::new(BasisSet::constant(1), vec![2.5]).unwrap();
        let approx = LinearValueApprox::new(vec![fit.clone(), fit]).unwrap();
        let mut buf = Vec::new();
        approx.write_csv(&mut buf).unwrap();
        let rows = read_param_csv(buf.as_slice()).unwrap();
        assert_eq!(rows, vec![(Some(0), 0, 2.5), (Some(1), 0, 2.5)]);
    }
}
