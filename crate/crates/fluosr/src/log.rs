//! Per-step training log as CSV.
//!
//! Each step writes one row; each finished epoch adds a summary row with an
//! empty `step` and the validation metrics. Terms that are inactive in the
//! current phase are left empty.

use std::fs::{File, OpenOptions};
use std::path::Path;

use fluosr_core::trainer::{Phase, StepReport, Validation};

use crate::error::{data_err, FluoError, Result};

pub const COLUMNS: [&str; 11] = [
    "phase",
    "epoch",
    "step",
    "lr",
    "pixel_loss",
    "perceptual_loss",
    "adv_loss_G",
    "adv_loss_D",
    "val_psnr",
    "val_ssim",
    "wall_ms",
];

pub struct TrainLog {
    writer: csv::Writer<File>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl TrainLog {
    /// Opens `path` for appending, writing the header only if the file is
    /// new or empty.
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| FluoError::io(path, e))?;
        let fresh = file.metadata().map_err(|e| FluoError::io(path, e))?.len() == 0;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            writer.write_record(COLUMNS).map_err(csv_err)?;
            writer.flush().map_err(|e| FluoError::io(path, e))?;
        }
        Ok(Self { writer })
    }

    pub fn step(&mut self, epoch: usize, step: usize, r: &StepReport, wall_ms: f64) -> Result<()> {
        self.row([
            r.phase.number().to_string(),
            epoch.to_string(),
            step.to_string(),
            r.lr.to_string(),
            r.pixel.to_string(),
            cell(r.content),
            cell(r.adversarial_g),
            cell(r.adversarial_d),
            String::new(),
            String::new(),
            format!("{wall_ms:.3}"),
        ])
    }

    pub fn epoch(&mut self, phase: Phase, epoch: usize, lr: f64, val: Option<Validation>, wall_ms: f64) -> Result<()> {
        self.row([
            phase.number().to_string(),
            epoch.to_string(),
            String::new(),
            lr.to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            cell(val.map(|v| v.psnr)),
            cell(val.map(|v| v.ssim)),
            format!("{wall_ms:.3}"),
        ])
    }

    fn row(&mut self, fields: [String; 11]) -> Result<()> {
        self.writer.write_record(&fields).map_err(csv_err)?;
        self.writer
            .flush()
            .map_err(|e| data_err!("cannot flush training log: {e}"))
    }
}

fn csv_err(e: csv::Error) -> FluoError {
    data_err!("training log: {e}")
}

/// One parsed log row; empty cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub phase: u8,
    pub epoch: usize,
    pub step: Option<usize>,
    pub values: [Option<f64>; 8],
}

impl LogRow {
    pub fn lr(&self) -> Option<f64> {
        self.values[0]
    }
    pub fn pixel(&self) -> Option<f64> {
        self.values[1]
    }
    pub fn perceptual(&self) -> Option<f64> {
        self.values[2]
    }
    pub fn adv_g(&self) -> Option<f64> {
        self.values[3]
    }
    pub fn adv_d(&self) -> Option<f64> {
        self.values[4]
    }
    pub fn val_psnr(&self) -> Option<f64> {
        self.values[5]
    }
    pub fn val_ssim(&self) -> Option<f64> {
        self.values[6]
    }
}

/// Reads a log written by [`TrainLog`], checking the header.
pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = reader.headers().map_err(csv_err)?;
    if header.iter().ne(COLUMNS) {
        return Err(data_err!("{}: unexpected header {:?}", path.display(), header));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let opt = |i: usize| -> Result<Option<f64>> {
            let s = &rec[i];
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| data_err!("bad number `{s}` in {}", COLUMNS[i]))
            }
        };
        let int = |i: usize| -> Result<usize> {
            rec[i].parse().map_err(|_| data_err!("bad integer `{}` in {}", &rec[i], COLUMNS[i]))
        };
        let mut values = [None; 8];
        for (k, v) in values.iter_mut().enumerate() {
            *v = opt(k + 3)?;
        }
        rows.push(LogRow {
            phase: int(0)? as u8,
            epoch: int(1)?,
            step: if rec[2].is_empty() { None } else { Some(int(2)?) },
            values,
        });
    }
    Ok(rows)
}
