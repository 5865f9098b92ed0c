//! File formats: PFM disparity maps, the `LFT1` tensor container, PNG views
//! and the key=value scene directory layout.

mod pfm;
mod png;
mod scene;
mod tensor;

pub use pfm::{read_pfm, write_pfm};
pub use png::{read_view_png, write_mask_png, write_view_png};
pub use scene::{load_scene, quantize_view, save_scene, SceneConfig};
pub use tensor::{load_tensor, save_tensor};
