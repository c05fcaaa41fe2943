//! Vocabulary for synthetic captions. Multi-word nouns use `_` in AOI labels.

pub(crate) const NOUNS: &[&str] = &[
    "wall", "rock", "tree", "sky", "cloud", "dog", "cat", "horse", "car", "bus", "train", "boat", "bench", "table",
    "chair", "window", "door", "road", "street", "sign", "fence", "grass", "water", "beach", "mountain", "snow",
    "building", "tower", "bridge", "plate", "pizza", "cup", "bottle", "lamp", "bed", "pillow", "shirt", "hat",
    "umbrella", "kite", "frisbee", "ball", "bike", "truck", "plane", "bird", "cow", "sheep", "elephant", "giraffe",
    "zebra", "bear", "flower", "vase", "clock", "book", "laptop", "phone", "sink", "toilet", "mirror", "stop_sign",
    "traffic_light", "fire_hydrant", "tennis_racket", "surf_board",
];

pub(crate) const ADJECTIVES: &[&str] = &[
    "small", "large", "red", "white", "black", "old", "wooden", "green", "blue", "tall", "bright", "dark",
];

pub(crate) const CONNECTORS: &[&str] = &["next to", "near", "behind", "in front of", "beside", "and", "under", "above"];
