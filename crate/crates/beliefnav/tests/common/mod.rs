#![allow(dead_code)]

use beliefnav::dataset::Dataset;
use beliefnav_core::config::Config;

/// Small settings that keep every integration test to a few seconds.
pub const TINY: &str = "
world_size = 16
map_size = 32
pano_scans = 8
pano_columns = 8
feat_channels = 3
map_channels = 4
hidden = 4
embed_dim = 6
t_max = 3
kernel_size = 3
motion_hidden = 4
lingunet_hidden = 4
baseline_hidden = 2
policy_hidden = 5
outer_steps = 4
batch_size = 2
iterations = 4
val_every = 2
val_episodes = 2
train_worlds = 3
episodes_per_world = 2
val_seen_episodes = 2
val_unseen_worlds = 2
val_unseen_per_world = 1
";

pub fn tiny() -> Config {
    Config::from_text(TINY).unwrap()
}

pub fn corpus() -> Dataset {
    Dataset::generate(&tiny()).unwrap()
}
