//! Persistence: the append-only tuning-record store, model descriptor files
//! and rendered reports.

mod descriptor;
mod report;
mod store;

pub use descriptor::{
    descriptor_to_string, find_model, load_descriptor, load_library, parse_descriptor, DescriptorError, PROPORTION_SUM_LIMIT,
};
pub use report::{render, ReportDocument, ReportFormat, CSV_HEADER};
pub use store::{RecordStore, StoreError};
