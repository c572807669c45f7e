//! Level-1 quotes, microprices and the synthetic quote generator.

mod parse;
mod quote;
mod synth;

pub use parse::{
    open_source, parse_quote_file, parse_quote_stream, read_microprice_dump, write_microprice_dump,
    write_quotes, ParsedQuotes, QuoteSchema, RowError,
};
pub use quote::{build_microprice_series, microprice, MicropriceSeries, QuoteEvent, QuoteIssue};
pub use synth::{generate_day, generate_synthetic_market, merge_streams, SyntheticMarketConfig};
