pub mod audio;
pub mod cli;
pub mod ema;
pub mod eval;
pub mod inversion;
pub mod kinematics;
pub mod pipeline;
pub mod postproc;
pub mod profiler;
pub mod transport;
pub mod vad;
pub mod window;
