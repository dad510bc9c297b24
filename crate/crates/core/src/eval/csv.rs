use std::io::{self, Write};

use crate::train::StepRecord;

use super::{DensityGrid, ErrorRow, MomentRow};

pub fn write_metrics_csv<W: Write>(mut w: W, steps: &[StepRecord]) -> io::Result<()> {
    writeln!(w, "interval,adapt_iter,epoch,batch,loss,interface,lr")?;
    for s in steps {
        let interface = s.interface.map_or(String::new(), |v| v.to_string());
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            s.interval, s.iteration, s.epoch, s.batch, s.loss, interface, s.lr
        )?;
    }
    Ok(())
}

/// Rows are tagged with the adaptivity iteration they belong to.
pub fn write_errors_csv<W: Write>(mut w: W, rows: &[(usize, ErrorRow)]) -> io::Result<()> {
    writeln!(w, "adapt_iter,t,rel_err,kl,mean_abs_rlog")?;
    for (k, r) in rows {
        writeln!(w, "{k},{},{},{},{}", r.t, r.rel_err, r.kl, r.mean_abs_rlog)?;
    }
    Ok(())
}

pub fn write_moments_csv<W: Write>(mut w: W, rows: &[MomentRow]) -> io::Result<()> {
    writeln!(w, "t,dim,mean_ref,mean_model,var_ref,var_model")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.t, r.dim, r.mean_ref, r.mean_model, r.var_ref, r.var_model
        )?;
    }
    Ok(())
}

pub fn write_grid_csv<W: Write>(mut w: W, grid: &DensityGrid) -> io::Result<()> {
    writeln!(w, "x{},x{},t,p", grid.axes[0] + 1, grid.axes[1] + 1)?;
    for (i, a) in grid.x1.iter().enumerate() {
        for (j, b) in grid.x2.iter().enumerate() {
            writeln!(w, "{a},{b},{},{}", grid.t, grid.p[i][j])?;
        }
    }
    Ok(())
}

/// One row per point, header `x1..xd`.
pub fn write_samples_csv<W: Write>(mut w: W, dim: usize, points: &[Vec<f64>]) -> io::Result<()> {
    let header: Vec<String> = (1..=dim).map(|j| format!("x{j}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for p in points {
        let row: Vec<String> = p.iter().map(f64::to_string).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_samples_still_have_a_header() {
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, 3, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x1,x2,x3\n");
    }

    #[test]
    fn metrics_rows() {
        let mut buf = Vec::new();
        let s = StepRecord {
            interval: 0,
            iteration: 1,
            epoch: 2,
            batch: 3,
            loss: 0.5,
            interface: None,
            lr: 1e-3,
        };
        write_metrics_csv(&mut buf, &[s]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "interval,adapt_iter,epoch,batch,loss,interface,lr\n0,1,2,3,0.5,,0.001\n"
        );
    }
}
