use clap::Args;
use serde::Serialize;

use seqjoint::binary_lab::{
    analyze, stationary_points, BinaryDecoder, BinaryMarkov, IdentifiabilityReport, StationaryPoint,
};

use crate::io::emit_json;
use crate::{usage, OutArg};

#[derive(Debug, Args)]
pub struct IdentifiabilityArgs {
    /// Adjacent-pair joint of the prior as b00,b01,b10,b11.
    #[arg(long = "B", value_delimiter = ',', conflicts_with_all = ["b0", "rho"])]
    joint: Option<Vec<f64>>,
    /// Unigram probability of hidden symbol 0 (with --rho).
    #[arg(long, requires = "rho")]
    b0: Option<f64>,
    /// Neighbour correlation of the prior (with --b0).
    #[arg(long, requires = "b0", allow_hyphen_values = true)]
    rho: Option<f64>,
    /// p(y = 0 | x = 0).
    #[arg(long)]
    eta: f64,
    /// p(y = 0 | x = 1).
    #[arg(long)]
    zeta: f64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Serialize)]
struct Output {
    #[serde(flatten)]
    report: IdentifiabilityReport,
    stationary_points: Vec<StationaryPoint>,
}

pub fn identifiability(a: IdentifiabilityArgs) -> anyhow::Result<()> {
    let prior = match (&a.joint, a.b0, a.rho) {
        (Some(j), _, _) if j.len() != 4 => {
            return Err(usage("--B takes four comma-separated entries"))
        }
        (Some(j), _, _) => BinaryMarkov::from_joint([[j[0], j[1]], [j[2], j[3]]]),
        (None, Some(b0), Some(rho)) => BinaryMarkov::with_unigram(b0, rho),
        _ => return Err(usage("give the prior as --B or as --b0 with --rho")),
    }
    .map_err(|e| usage(e.to_string()))?;
    let truth = BinaryDecoder::new(a.eta, a.zeta).map_err(|e| usage(e.to_string()))?;
    let report = analyze(&prior, &truth)?;
    let points = if report.candidates.is_empty() {
        Vec::new()
    } else {
        stationary_points(&prior.joint, &report.observed_bigram)?
    };
    emit_json(
        a.out.out.as_deref(),
        &Output {
            report,
            stationary_points: points,
        },
    )
}
