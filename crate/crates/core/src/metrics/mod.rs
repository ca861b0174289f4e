//! SI-SNR scoring, the benchmark harness and streaming profiles.

mod bench;
mod profile;
mod sisnr;

pub use bench::{model_id, run_benchmark, score_estimates, BenchReport, ConditionRow, ExampleRecord};
pub use profile::{profile_stream, ProfileRecord};
pub use sisnr::{si_snr, si_snr_with_grad, si_snri, SI_SNR_CAP_DB};
