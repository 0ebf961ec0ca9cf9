pub mod analysis;
pub mod autodiff;
pub mod autogeolabel;
pub mod check;
pub mod config;
pub mod io;
pub mod perturb;
pub mod pipeline;
pub mod rasterizer;
pub mod regressor;
pub mod report;
pub mod seeds;
pub mod synthcity;
pub mod vae;
