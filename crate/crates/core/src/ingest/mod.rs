//! Transactions, market controls, cycle tables and the modelling frame.

mod cycles;
mod frame;
mod market;
mod transactions;

pub use cycles::{CycleEntry, CycleTable};
pub use frame::{
    aggregate_nft_cycle, assign_cycles, build_model_frame, encode_hue, encode_hue_column,
    flag_collinear, month_index, zscore, AggregatedCell, AngleUnit, CellTable, FrameOptions,
    ObservationTable, SaleObservation, Scaler, ScalerColumn, ANGLE_COLUMNS,
};
pub(crate) use market::column;
pub use market::{load_controls, ControlSeries, MarketControls, RateSeries, CONTROL_COLUMNS};
pub use transactions::{load_transactions, DropLog, LoadedTransactions, Transaction};

use chrono::NaiveDate;

use crate::{Error, Result};

/// Forward-fill horizon for daily market series, in calendar days.
pub const MAX_FFILL_DAYS: i64 = 3;

pub(crate) fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

pub(crate) fn parse_date_or_err(s: &str, file: &str, line: usize) -> Result<NaiveDate> {
    parse_date(s).ok_or_else(|| Error::Parse {
        file: file.to_string(),
        line,
        message: format!("unparseable date {s:?}"),
    })
}
