//! Signal files: `time_s,torque` CSV plus a JSON sidecar carrying the
//! metadata (`<stem>.json` next to the CSV).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DspError;
use crate::domain::{FillLevel, SignalMeta, SignalStage, TorqueSignal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub liquid_id: Option<usize>,
    pub fill_level: Option<FillLevel>,
    pub seed: Option<u64>,
    pub sample_rate_hz: f64,
    pub stage: SignalStage,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> DspError {
    DspError::Io(format!("{}: {e}", path.display()))
}

pub fn write_signal(path: &Path, signal: &TorqueSignal) -> Result<(), DspError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    writer.write_record(["time_s", "torque"]).map_err(|e| io_err(path, e))?;
    let rate = signal.sample_rate();
    for (i, x) in signal.samples().iter().enumerate() {
        writer
            .write_record([format!("{}", i as f64 / rate), format!("{x}")])
            .map_err(|e| io_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))?;

    let sidecar = Sidecar {
        liquid_id: signal.meta.liquid_id,
        fill_level: signal.meta.fill_level,
        seed: signal.meta.seed,
        sample_rate_hz: rate,
        stage: signal.stage(),
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| io_err(&side, e))?;
    std::fs::write(&side, text + "\n").map_err(|e| io_err(&side, e))
}

pub fn read_signal(path: &Path) -> Result<TorqueSignal, DspError> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| io_err(&side, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| io_err(&side, e))?;

    let mut reader = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let headers = reader.headers().map_err(|e| io_err(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["time_s", "torque"] {
        return Err(io_err(path, format!("expected header time_s,torque, got {}", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut samples = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| io_err(path, e))?;
        let value: f64 = record
            .get(1)
            .ok_or_else(|| io_err(path, format!("row {} has no torque column", line + 2)))?
            .trim()
            .parse()
            .map_err(|e| io_err(path, format!("row {}: {e}", line + 2)))?;
        samples.push(value);
    }
    let meta = SignalMeta {
        liquid_id: sidecar.liquid_id,
        fill_level: sidecar.fill_level,
        seed: sidecar.seed,
        stage: sidecar.stage,
    };
    TorqueSignal::new(samples, sidecar.sample_rate_hz, meta).map_err(|e| io_err(path, e))
}
