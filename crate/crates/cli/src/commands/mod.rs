pub mod gen_world;
pub mod rank;
pub mod report;
pub mod sweep;
pub mod train;
pub mod verify_bounds;
