//! Progressive occlusion-aware amodal completion.
//!
//! The pipeline recovers the hidden part of a query object by repeatedly
//! analysing which neighbours occlude it, framing the object, and asking a
//! diffusion inpainter to regenerate the occluded pixels. Mixed-context
//! sampling runs the early denoising steps on a clean backdrop so the model
//! does not redraw objects that merely co-occur with the query.
//!
//! All models sit behind the traits in [`backends`]; the scripted mock
//! makes every stage reproducible without trained weights.

pub mod backends;
pub mod bundle;
pub mod config;
pub mod curation;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod framing;
pub mod io;
pub mod kmeans;
pub mod occlusion;
pub mod pipeline;
pub mod raster;
pub mod sampler;

pub use config::{CleanBackground, PipelineConfig, SamplerKind};
pub use error::{BackendError, Error, Result};
pub use raster::{BBox, BinaryMask, ImageBuffer, Side, SideSet};
pub use pipeline::{run_pipeline, CompletionBundle, QuerySpec, Termination};
