use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::loss::{LossBreakdown, TrainingTriple};

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A tensor or buffer had the wrong dimensions.
    Shape {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    /// A user or item index is outside the graph.
    IndexOutOfRange {
        what: &'static str,
        index: u64,
        bound: u64,
    },
    /// The same (user, item) pair was supplied twice.
    DuplicateEdge { user: u32, item: u32 },
    /// Two nodes are not adjacent in the queried graph.
    NotAdjacent { user: u32, item: u32 },
    /// A probability, threshold or hyperparameter is outside its domain.
    InvalidArgument(String),
    /// A backward pass needed a forward intermediate that was not recorded.
    MissingIntermediate(&'static str),
    /// Training produced a NaN or infinite loss.
    NonFiniteLoss(Box<NonFiniteDump>),
}

/// State captured when a training step produced a non-finite loss.
#[derive(Debug, Clone, PartialEq)]
pub struct NonFiniteDump {
    pub epoch: usize,
    pub step: usize,
    pub loss: LossBreakdown,
    pub positive_batch: Vec<TrainingTriple>,
    pub negative_batch: Vec<TrainingTriple>,
}


impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape {
                what,
                expected,
                found,
            } => write!(
                f,
                "{what}: expected shape {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Error::IndexOutOfRange { what, index, bound } => {
                write!(f, "{what} index {index} out of range (bound {bound})")
            }
            Error::DuplicateEdge { user, item } => {
                write!(f, "duplicate edge for user {user}, item {item}")
            }
            Error::NotAdjacent { user, item } => {
                write!(f, "user {user} and item {item} are not adjacent")
            }
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::MissingIntermediate(what) => {
                write!(f, "missing forward intermediate: {what}")
            }
            Error::NonFiniteLoss(dump) => write!(
                f,
                "non-finite loss at epoch {} step {} (total {}, db {}, cl {}, reg {}; {} positive / {} negative triples in batch)",
                dump.epoch,
                dump.step,
                dump.loss.total,
                dump.loss.ranking,
                dump.loss.contrastive,
                dump.loss.regularization,
                dump.positive_batch.len(),
                dump.negative_batch.len()
            ),
        }
    }
}

impl core::error::Error for Error {}
