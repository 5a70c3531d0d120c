//! Cell-level array lineage indexing.
//!
//! The engine stores which input array cells contributed to which output
//! array cells for each registered operation, compressed into interval
//! tables that can be queried in place (no decompression on the query
//! path) and reused across repeated calls of the same operation.
//!
//! Modules:
//! - [`lineage`]: relational model for raw cell-to-cell lineage.
//! - [`provrc`]: the interval compression algorithm and its inverse.
//! - [`query`]: forward/backward lineage queries over compressed tables.
//! - [`reuse`]: operation signatures and lineage reuse prediction.
//! - [`catalog`]: durable storage of arrays, edges, tables and signatures.
//! - [`synth`]: synthetic lineage generators and the brute-force reference.

pub mod catalog;
pub mod lineage;
pub mod provrc;
pub mod query;
pub mod reuse;
pub mod synth;

pub use lineage::{ArrayMeta, IndexRange, LineageRelation, LineageRow};
pub use provrc::{CompressedRow, CompressedTable, Direction, GeneralizedTable};
