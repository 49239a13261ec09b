pub mod events;
pub mod model;
pub mod par;
pub mod sim;
pub mod tensor;
pub mod train;
pub mod voxel;
