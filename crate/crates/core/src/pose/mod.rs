//! Skeleton layouts, partitioned adjacency for graph classifiers, layout
//! remapping and pose-sequence augmentation.

mod layout;
mod sequence;

pub use layout::{
    build_adjacency, build_layout, Adjacency, SkeletonLayout, BLAZEPOSE33, CENTRIFUGAL, CENTRIPETAL, OPENPOSE18, ROOT,
};
pub use sequence::{
    camera_motion_augment, crop_pose_window, map_to_openpose, read_pose_jsonl, write_pose_jsonl, BlazePose33,
    CameraMotion, CameraPose, Joint, OpenPose18, PoseLayout, PoseSequence, POSE_FPS, POSE_WINDOW,
};
