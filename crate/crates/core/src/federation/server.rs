use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Unweighted element-wise mean of the client vectors.
///
/// Each coordinate is summed in ascending order at double precision, so the
/// result does not depend on client order; a coordinate on which all clients
/// agree is returned unchanged.
pub fn aggregate<T: Scalar>(vectors: &[Vec<T>]) -> Result<Vec<T>> {
    let first = vectors.first().ok_or(Error::Empty("vectors to aggregate"))?;
    let len = first.len();
    if let Some(bad) = vectors.iter().find(|v| v.len() != len) {
        return Err(Error::dim("aggregate", len, bad.len()));
    }
    let n = vectors.len() as f64;
    let mut column = Vec::with_capacity(vectors.len());
    let out = (0..len)
        .map(|i| {
            column.clear();
            column.extend(vectors.iter().map(|v| v[i]));
            let v0 = column[0];
            if column.iter().all(|v| v.bits() == v0.bits()) {
                return v0;
            }
            column.sort_by(|a, b| a.as_f64().total_cmp(&b.as_f64()));
            T::of(column.iter().map(|v| v.as_f64()).sum::<f64>() / n)
        })
        .collect();
    Ok(out)
}

/// Parameters moved in one round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundComm {
    pub round: usize,
    pub uploaded: u64,
    pub downloaded: u64,
}

impl RoundComm {
    pub fn total(&self) -> u64 {
        self.uploaded + self.downloaded
    }
}

/// Communication accounting, in transmitted scalars.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CommLedger {
    pub rounds: Vec<RoundComm>,
    pub total_uploaded: u64,
    pub total_downloaded: u64,
    /// Wall-clock seconds of local training per round, all clients included.
    #[serde(skip)]
    pub train_seconds: Vec<f64>,
}

impl CommLedger {
    pub fn record(&mut self, round: usize, uploaded: u64, downloaded: u64) {
        self.rounds.push(RoundComm {
            round,
            uploaded,
            downloaded,
        });
        self.total_uploaded += uploaded;
        self.total_downloaded += downloaded;
    }

    pub fn total(&self) -> u64 {
        self.total_uploaded + self.total_downloaded
    }
}

/// Global state held by the server between rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct ServerState<T> {
    pub global_fam: Vec<T>,
    pub global_dc: Option<Vec<T>>,
    pub round: usize,
    pub ledger: CommLedger,
}
