//! Tooling for long-tail robot demonstration datasets: curation of
//! long-tailed splits, class-balanced re-sampling schedules, phase
//! segmentation, phase-wise failure analytics and approach-phase
//! augmentation by object grafting.

pub mod analytics;
pub mod apa;
pub mod dataio;
pub mod ltbench;
pub mod phaseseg;
pub mod renderbridge;
pub mod resampler;
pub mod rng;
pub mod synthgen;
pub mod trajmodel;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Any error raised by the library, with a module-qualified code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] dataio::DataError),
    #[error(transparent)]
    Bench(#[from] ltbench::BenchError),
    #[error(transparent)]
    Resample(#[from] resampler::ResampleError),
    #[error(transparent)]
    Segment(#[from] phaseseg::SegmentError),
    #[error(transparent)]
    Analytics(#[from] analytics::AnalyticsError),
    #[error(transparent)]
    Apa(#[from] apa::ApaError),
    #[error(transparent)]
    Render(#[from] renderbridge::BridgeError),
    #[error(transparent)]
    Synth(#[from] synthgen::SynthError),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Data(e) => e.code(),
            Error::Bench(e) => e.code(),
            Error::Resample(e) => e.code(),
            Error::Segment(e) => e.code(),
            Error::Analytics(e) => e.code(),
            Error::Apa(e) => e.code(),
            Error::Render(e) => e.code(),
            Error::Synth(e) => e.code(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
