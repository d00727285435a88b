use alloc::boxed::Box;
use alloc::string::String;

/// Errors raised by geometry, task-tree, dynamics and control evaluation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("coordinate {coordinate} = {value} is outside the domain of the {chart} chart")]
    DomainViolation {
        chart: &'static str,
        coordinate: usize,
        value: f64,
    },
    #[error("ambient point is at a singularity of the {0} chart")]
    ChartSingularity(&'static str),
    #[error("the {0} chart has no embedding")]
    NoEmbedding(&'static str),
    #[error("metric is not positive definite (chart degeneracy)")]
    MetricInversion,
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("potential is singular at this point: {0}")]
    SingularPotential(&'static str),
    #[error("weighted least-squares Gram matrix is singular (rank-deficient tasks)")]
    SingularGram,
    #[error("task node `{node}`: {source}")]
    Node {
        node: String,
        #[source]
        source: Box<Error>,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("singular linear system in {0}")]
    SingularSystem(&'static str),
}

impl Error {
    pub(crate) fn at_node(self, node: &str) -> Self {
        Error::Node {
            node: node.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension {
            what,
            expected,
            got,
        }
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
