use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Which half of the appetite definition an allocation breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppetiteRule {
    /// Some atom received more than `alpha` times its mass.
    OverFilled,
    /// Unallocated source mass coexists with an unsaturated atom.
    StarvingWithLeftover,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Bad input or parameters (dimension mismatch, non-positive resolution, ...).
    Config(String),
    /// Not enough source mass to saturate a claim.
    Exhausted { available: f64, target: f64 },
    /// The stage recursion did not reach a fixed point within the stage budget.
    NonConverged {
        stages: usize,
        changed_elements: usize,
    },
    /// A per-stage monotonicity check failed.
    Invariant(String),
    /// Appetite invariant violated; carries offending atom and element indices.
    Violation {
        rule: AppetiteRule,
        atoms: Vec<usize>,
        elements: Vec<usize>,
    },
    /// The one-dimensional interval allocation requires mutually singular measures.
    SingularityViolation { shared_mass: f64, total: f64 },
    /// The auxiliary point process came out empty.
    EmptyChi,
    /// A purely diffuse destination needs an auxiliary point process.
    NoAuxChi,
    /// Source and destination cells of a pairing carry different mass.
    Pairing {
        cell: usize,
        source: f64,
        destination: f64,
    },
    /// A probability level or quantile argument outside its domain.
    Domain(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Exhausted { available, target } => write!(
                f,
                "exhausted: only {available} mass available for a claim of {target}"
            ),
            Error::NonConverged {
                stages,
                changed_elements,
            } => write!(
                f,
                "no fixed point after {stages} stages ({changed_elements} elements still changing)"
            ),
            Error::Invariant(msg) => write!(f, "invariant violated: {msg}"),
            Error::Violation {
                rule,
                atoms,
                elements,
            } => write!(
                f,
                "appetite violation {rule:?}: atoms {atoms:?}, elements {elements:?}"
            ),
            Error::SingularityViolation { shared_mass, total } => write!(
                f,
                "source and destination share {shared_mass} of {total} mass; they must be mutually singular"
            ),
            Error::EmptyChi => write!(f, "auxiliary point process is empty"),
            Error::NoAuxChi => write!(
                f,
                "destination is diffuse and no auxiliary point process is configured"
            ),
            Error::Pairing {
                cell,
                source,
                destination,
            } => write!(
                f,
                "cell {cell}: source mass {source} does not match destination mass {destination}"
            ),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
