//! Error type shared across the simulator.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Total swap fees (incentive + slippage + trading) reached 100% of the
    /// seized value; no positive repayment is possible at this size.
    #[error("infeasible swap: incentive + slippage + trading fee = {fees} >= 1")]
    InfeasibleSwap { fees: f64 },

    /// Requested repay amount lies beyond the maximum any swap can produce.
    #[error("infeasible repay: {repay} exceeds the swappable bound {bound}")]
    InfeasibleRepay { repay: f64, bound: f64 },

    #[error("stale liquidation plan: {0}")]
    StalePlan(String),

    #[error("price data: {0}")]
    PriceData(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("cannot rescale asset {asset}: realized volatility is zero")]
    CannotRescale { asset: String },

    #[error("population generation: {0}")]
    Generation(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
