//! Curation pipeline and numerics kernel for ultra-high-resolution image
//! editing data.
//!
//! * [`quality`]: sharpness, exposure, saturation and GLCM texture checks.
//! * [`curation`]: scene splitting, optical flow and pair mining from frames.
//! * [`adherence`]: edit-region masks, alignment and preservation scores.
//! * [`numerics`]: RoPE and base rescaling, temperature-scaled attention,
//!   flow-matching and frequency-focused losses.
//! * [`pfid`]: patch extraction, Gaussian feature statistics, Fréchet distance.
//! * [`pipeline`]: manifest I/O and the staged filtering run.

pub mod adherence;
pub mod curation;
pub mod formats;
pub mod image;
pub mod numerics;
pub mod par;
pub mod pfid;
pub mod pipeline;
pub mod providers;
pub mod quality;
