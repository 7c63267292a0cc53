pub mod autodiff;
pub mod cluster;
pub mod data;
pub mod evaluation;
pub mod extractors;
pub mod gp;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod scalar;

pub type Tensor = autodiff::Tensor<f64>;
pub type Tape = autodiff::Tape<f64>;
pub type ParamStore = autodiff::ParamStore<f64>;
pub type Adam = autodiff::Adam<f64>;
pub type SeKernel = gp::SeKernel<f64>;
pub type ExactGp = gp::ExactGp<f64>;
pub type SvgpState = gp::SvgpState<f64>;
pub type GaussianPrediction = gp::GaussianPrediction<f64>;
