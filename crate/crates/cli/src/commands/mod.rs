pub mod ablate;
pub mod converge;
pub mod gradcheck;
pub mod solvebench;
pub mod train;
