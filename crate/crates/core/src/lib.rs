pub mod fieldstore;
pub mod viewfactory;
pub mod encoders;
pub mod contrastcore;
pub mod evalsuite;
pub mod cli;
