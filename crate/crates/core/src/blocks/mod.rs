//! Network components: the U-net backbone, LCFI++, CBAM, SCI, RRDB,
//! attention selection, the generator and the multi-scale discriminator.
//!
//! All weights live in a [`ParamStore`]; a forward pass binds them onto a
//! tape through [`Params`].

mod attention;
mod cbam;
mod discriminator;
mod generator;
mod lcfi;
mod params;
mod rrdb;
mod sci;
mod unet;

pub use attention::{attention_selection, Selection};
pub use cbam::{Cbam, CbamOutput};
pub use discriminator::{Discriminator, DiscriminatorSpec, SCALES};
pub use generator::{Generator, GeneratorOutput, GeneratorSpec};
pub use lcfi::{Lcfi, LcfiSpec};
pub use params::{instance_norm, Conv, ParamStore, Params};
pub use rrdb::RrdbStack;
pub use sci::sci_forward;
pub use unet::{UNet, UNetOutput, UNetSpec};
