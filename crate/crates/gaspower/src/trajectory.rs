//! Output series: per-step trajectory rows, dense-output samples on a
//! fixed grid, channel naming, CSV emission and the RMSE metric.

use crate::daesys::Channel;
use std::io::Write;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum TrajectoryError {
    #[error("series length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// Column name of a channel in the stable CSV schema.
pub fn channel_name(ch: Channel) -> String {
    match ch {
        Channel::Time => "time".into(),
        Channel::PipeP { pipe, point } => format!("pipe{pipe}.p[{point}]"),
        Channel::PipeQ { pipe, point } => format!("pipe{pipe}.q[{point}]"),
        Channel::NodeP { node } => format!("node{node}.p"),
        Channel::NodeQ { node } => format!("node{node}.q"),
        Channel::FaultPUp { fault } => format!("fault{fault}.p_up"),
        Channel::FaultPDn { fault } => format!("fault{fault}.p_dn"),
        Channel::FaultQUp { fault } => format!("fault{fault}.q_up"),
        Channel::FaultQDn { fault } => format!("fault{fault}.q_dn"),
        Channel::BusVmag { bus } => format!("bus{bus}.Vmag"),
        Channel::MachOmega { unit } => format!("mach{unit}.omega"),
        Channel::GtPm { unit } => format!("gt{unit}.Pm"),
        Channel::GtFuel { unit } => format!("gt{unit}.fuel"),
        Channel::P2gPower { unit } => format!("p2g{unit}.P"),
    }
}

/// Accepted-step series of named channels, strictly increasing in time.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub channels: Vec<Channel>,
    pub times: Vec<f64>,
    /// one row of channel values per recorded time
    pub rows: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(channels: Vec<Channel>) -> Self {
        Self {
            channels,
            times: Vec::new(),
            rows: Vec::new(),
        }
    }

    /// Appends a row; rows that do not advance time are dropped.
    pub fn push_row(&mut self, t: f64, values: Vec<f64>) {
        if let Some(last) = self.times.last() {
            if t <= *last {
                return;
            }
        }
        self.times.push(t);
        self.rows.push(values);
    }

    pub fn channel(&self, ch: Channel) -> Option<Vec<f64>> {
        let idx = self.channels.iter().position(|c| *c == ch)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(out, "time")?;
        for ch in &self.channels {
            write!(out, ",{}", channel_name(*ch))?;
        }
        writeln!(out)?;
        for (t, row) in self.times.iter().zip(&self.rows) {
            write!(out, "{t:.6}")?;
            for v in row {
                write!(out, ",{v:.9}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Channel series dense-sampled at a fixed time grid.
#[derive(Debug, Clone)]
pub struct SampledSeries {
    pub channels: Vec<Channel>,
    pub times: Vec<f64>,
    /// column-major: one vector per channel
    pub values: Vec<Vec<f64>>,
}

impl SampledSeries {
    pub fn channel(&self, ch: Channel) -> Option<&[f64]> {
        let idx = self.channels.iter().position(|c| *c == ch)?;
        Some(&self.values[idx])
    }

    /// Rows filled across every channel (trailing unfilled samples are
    /// not written).
    pub fn filled_len(&self) -> usize {
        self.values
            .iter()
            .map(|c| c.len())
            .min()
            .unwrap_or(0)
            .min(self.times.len())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(out, "time")?;
        for ch in &self.channels {
            write!(out, ",{}", channel_name(*ch))?;
        }
        writeln!(out)?;
        for k in 0..self.filled_len() {
            write!(out, "{:.6}", self.times[k])?;
            for col in &self.values {
                write!(out, ",{:.9}", col[k])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Root-mean-square difference of two series on a common grid, in
/// whatever display unit the series carry.
pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64, TrajectoryError> {
    if a.len() != b.len() {
        return Err(TrajectoryError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / a.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        let off = rmse(&[1.0, 2.0], &[2.0, 3.0]).unwrap();
        assert!((off - 1.0).abs() < 1e-15);
        let ab = rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert!((ab - (12.5_f64).sqrt()).abs() < 1e-12);
        assert!((ab - 3.5355).abs() < 1e-4);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn trajectory_rows_keep_time_strictly_increasing() {
        let mut tr = Trajectory::new(vec![Channel::Time]);
        tr.push_row(0.0, vec![0.0]);
        tr.push_row(1.0, vec![1.0]);
        tr.push_row(1.0, vec![9.0]); // dropped
        tr.push_row(2.0, vec![2.0]);
        assert_eq!(tr.times, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn channel_names_follow_the_documented_schema() {
        assert_eq!(channel_name(Channel::PipeP { pipe: 1, point: 3 }), "pipe1.p[3]");
        assert_eq!(channel_name(Channel::NodeP { node: 4 }), "node4.p");
        assert_eq!(channel_name(Channel::BusVmag { bus: 2 }), "bus2.Vmag");
        assert_eq!(channel_name(Channel::GtPm { unit: 0 }), "gt0.Pm");
        assert_eq!(channel_name(Channel::GtFuel { unit: 0 }), "gt0.fuel");
        assert_eq!(channel_name(Channel::P2gPower { unit: 0 }), "p2g0.P");
    }
}
