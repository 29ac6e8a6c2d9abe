//! JSON Lines dataset format, one logged auction per line:
//!
//! `{"id", "user", "ads": [{"features", "bid", "value", "dist", "pctr"}], "k",
//!   "log": {"alloc", "pctr", "clicks"}}`

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::auction::{AuctionInstance, PublicAuction};
use crate::error::{CoreError, Result};
use crate::valuation::ValueDistribution;
use crate::world::{ClickRecord, LoggedAuction};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdLine {
    features: Vec<f64>,
    bid: f64,
    value: f64,
    dist: ValueDistribution,
    pctr: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AuctionLine {
    id: u64,
    user: Vec<f64>,
    ads: Vec<AdLine>,
    k: usize,
    log: ClickRecord,
}

fn to_line(rec: &LoggedAuction) -> AuctionLine {
    let a = &rec.instance.auction;
    AuctionLine {
        id: rec.id,
        user: a.user.clone(),
        ads: (0..a.n())
            .map(|i| AdLine {
                features: a.features[i].clone(),
                bid: a.bids[i],
                value: rec.instance.values[i],
                dist: a.dists[i],
                pctr: a.pctr[i],
            })
            .collect(),
        k: a.k,
        log: rec.log.clone(),
    }
}

fn from_line(line: AuctionLine) -> Result<LoggedAuction> {
    let mut auction = PublicAuction {
        user: line.user,
        features: Vec::new(),
        bids: Vec::new(),
        dists: Vec::new(),
        pctr: Vec::new(),
        k: line.k,
    };
    let mut values = Vec::new();
    for ad in line.ads {
        auction.features.push(ad.features);
        auction.bids.push(ad.bid);
        auction.dists.push(ad.dist);
        auction.pctr.push(ad.pctr);
        values.push(ad.value);
    }
    let instance = AuctionInstance::new(auction, values)?;
    let log = line.log;
    let k = instance.k();
    if !instance.auction.is_feasible(&log.alloc) || log.pctr.len() != k || log.clicks.len() != k {
        return Err(CoreError::InvalidAuction(format!("logged exposure does not fit k={k}")));
    }
    if log.clicks.iter().any(|&c| c > 1) {
        return Err(CoreError::InvalidAuction("click labels must be 0 or 1".into()));
    }
    Ok(LoggedAuction { id: line.id, instance, log })
}

pub fn write_jsonl<W: Write>(mut w: W, records: &[LoggedAuction]) -> Result<()> {
    for rec in records {
        serde_json::to_writer(&mut w, &to_line(rec))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<LoggedAuction>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: AuctionLine =
            serde_json::from_str(&line).map_err(|e| CoreError::Parse { line: i + 1, msg: e.to_string() })?;
        out.push(from_line(parsed).map_err(|e| CoreError::Parse { line: i + 1, msg: e.to_string() })?);
    }
    Ok(out)
}
