pub mod shm;
pub mod ws;
