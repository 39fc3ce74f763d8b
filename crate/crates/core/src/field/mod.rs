//! The scene function: (position, direction, appearance) -> (density, color,
//! temperature), with the mode switch that selects the baseline variants.

mod model;

pub use model::{
    field_eval, BackgroundInit, FieldConfig, FieldLayout, FieldMode, FieldModel, FieldOutput, FieldVars,
    ProposalNetConfig,
};
