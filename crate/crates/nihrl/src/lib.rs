//! File formats, configuration files, run directories and the command line
//! around [`nihrl_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod run;
