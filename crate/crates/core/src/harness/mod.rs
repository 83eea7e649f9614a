//! Configuration, file formats, training, evaluation, inference and the
//! direct-mixing motivation experiment.

pub mod checkpoint;
pub mod config;
pub mod container;
pub mod data;
pub mod evaluate;
pub mod fuse;
pub mod motivation;
pub mod optim;
pub mod train;
