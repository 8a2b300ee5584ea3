use std::fmt::Write as _;
use std::io::Write;

use crate::error::Result;

pub const TRACE_HEADER: &str =
    "run_id,algo,seed,k,samples_cum,wall_ms,train_loss,val_loss,grad_norm_sq,eps_bar_sq,delta_cap,delta_small,tracking_sq";

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub run_id: String,
    pub algo: String,
    pub seed: u64,
    pub k: usize,
    pub samples_cum: u64,
    pub wall_ms: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub grad_norm_sq: Option<f64>,
    pub eps_bar_sq: Option<f64>,
    pub delta_cap: Option<f64>,
    pub delta_small: Option<f64>,
    pub tracking_sq: Option<f64>,
}

impl TraceRow {
    /// One CSV line without the terminator. Reals use the shortest
    /// representation that parses back to the same value.
    pub fn to_line(&self) -> String {
        let mut s = String::with_capacity(160);
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{}",
            self.run_id, self.algo, self.seed, self.k, self.samples_cum, self.wall_ms, self.train_loss, self.val_loss
        );
        for v in [self.grad_norm_sq, self.eps_bar_sq, self.delta_cap, self.delta_small, self.tracking_sq] {
            s.push(',');
            if let Some(v) = v {
                let _ = write!(s, "{v}");
            }
        }
        s
    }
}

/// Writes the header before the first row and flushes every
/// `flush_every` rows (0 flushes only on [`TraceWriter::finish`]).
pub struct TraceWriter<W: Write> {
    out: W,
    header_written: bool,
    flush_every: usize,
    pending: usize,
    rows: usize,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W, flush_every: usize) -> Self {
        TraceWriter {
            out,
            header_written: false,
            flush_every,
            pending: 0,
            rows: 0,
        }
    }

    pub fn write_row(&mut self, row: &TraceRow) -> Result<()> {
        if !self.header_written {
            self.out.write_all(TRACE_HEADER.as_bytes())?;
            self.out.write_all(b"\n")?;
            self.header_written = true;
        }
        self.out.write_all(row.to_line().as_bytes())?;
        self.out.write_all(b"\n")?;
        self.rows += 1;
        self.pending += 1;
        if self.flush_every > 0 && self.pending >= self.flush_every {
            self.out.flush()?;
            self.pending = 0;
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Writes the header if no row was written, flushes and returns the sink.
    pub fn finish(mut self) -> Result<W> {
        if !self.header_written {
            self.out.write_all(TRACE_HEADER.as_bytes())?;
            self.out.write_all(b"\n")?;
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: usize) -> TraceRow {
        TraceRow {
            run_id: "mrbo-s0".into(),
            algo: "mrbo".into(),
            seed: 0,
            k,
            samples_cum: 10 * k as u64,
            wall_ms: 0,
            train_loss: 0.1,
            val_loss: 1.0 / 3.0,
            grad_norm_sq: Some(2.5e-7),
            eps_bar_sq: None,
            delta_cap: None,
            delta_small: Some(0.0),
            tracking_sq: None,
        }
    }

    #[test]
    fn header_once_and_empty_cells() {
        let mut w = TraceWriter::new(Vec::new(), 1);
        w.write_row(&row(0)).unwrap();
        w.write_row(&row(1)).unwrap();
        let text = String::from_utf8(w.finish().unwrap()).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], TRACE_HEADER);
        assert_eq!(lines[1], "mrbo-s0,mrbo,0,0,0,0,0.1,0.3333333333333333,0.00000025,,,0,");
        assert_eq!(lines[2].split(',').count(), 13);
    }

    #[test]
    fn floats_round_trip() {
        let v = 0.1f64 + 0.2;
        let mut r = row(0);
        r.train_loss = v;
        let line = r.to_line();
        let field = line.split(',').nth(6).unwrap();
        assert_eq!(field.parse::<f64>().unwrap(), v);
    }

    #[test]
    fn empty_trace_still_has_header() {
        let w = TraceWriter::new(Vec::new(), 0);
        assert_eq!(String::from_utf8(w.finish().unwrap()).unwrap(), format!("{TRACE_HEADER}\n"));
    }
}
