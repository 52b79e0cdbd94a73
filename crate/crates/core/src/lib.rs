//! Geolocation of texts from the placeness of the words they contain.
//!
//! Every frequent word gets a small Gaussian mixture over where it was used;
//! components that are tight and heavy have high placeness. Documents are then
//! placed from their gazetteer names, from all their placeful words, or from the
//! slot fillers of mined locational constructions.

pub mod constructions;
pub mod corpus;
pub mod eval;
pub mod gazetteer;
pub mod geo;
pub mod predict;
pub mod synth;
pub mod wordmodel;
