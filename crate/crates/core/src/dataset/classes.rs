use serde::{Deserialize, Serialize};

/// Trainable class id. Dense from 0; [`IGNORE_ID`] marks unlabeled pixels.
pub type ClassId = u8;

/// Id used for unlabeled points, invalid pixels and unknown raw labels.
pub const IGNORE_ID: ClassId = 255;

/// The nine semantic classes of the taxonomy, in id order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    Car = 0,
    Forklift = 1,
    Person = 2,
    Object = 3,
    DriveableGround = 4,
    OtherGround = 5,
    LaneMarking = 6,
    Vegetation = 7,
    Building = 8,
}

impl Class {
    pub const ALL: [Class; 9] = [
        Class::Car,
        Class::Forklift,
        Class::Person,
        Class::Object,
        Class::DriveableGround,
        Class::OtherGround,
        Class::LaneMarking,
        Class::Vegetation,
        Class::Building,
    ];

    pub fn id(self) -> ClassId {
        self as ClassId
    }

    pub fn from_id(id: ClassId) -> Option<Class> {
        Class::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Car => "car",
            Class::Forklift => "forklift",
            Class::Person => "person",
            Class::Object => "object",
            Class::DriveableGround => "driveable ground",
            Class::OtherGround => "other ground",
            Class::LaneMarking => "lane marking",
            Class::Vegetation => "vegetation",
            Class::Building => "building",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub id: ClassId,
    /// Semantic id stored in the low 16 bits of `.label` words.
    pub raw_id: u16,
    pub name: String,
    pub color: [u8; 3],
}

/// Mapping between on-disk raw label ids and dense trainable ids.
///
/// Raw id 0 is "unlabeled" and maps to the ignore id; raw ids `1..=9` map to
/// the trainable classes in table order. Every other raw id is unknown and
/// also maps to the ignore id, so the remap is total over `u16`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMap {
    classes: Vec<ClassInfo>,
    ignore_id: ClassId,
    unlabeled_raw_id: u16,
    raw_lookup: Vec<ClassId>,
}

impl ClassMap {
    pub fn standard() -> Self {
        let colors: [[u8; 3]; 9] = [
            [30, 90, 230],   // car: blue
            [245, 150, 30],  // forklift: orange
            [220, 30, 40],   // person: red
            [250, 230, 80],  // object
            [170, 170, 170], // driveable ground
            [90, 60, 40],    // other ground
            [160, 40, 200],  // lane marking: purple
            [40, 170, 60],   // vegetation
            [120, 200, 230], // building
        ];
        let classes = Class::ALL
            .iter()
            .zip(colors)
            .map(|(c, color)| ClassInfo { id: c.id(), raw_id: c.id() as u16 + 1, name: c.name().to_string(), color })
            .collect();
        Self::new(classes, IGNORE_ID, 0).expect("standard class map is valid")
    }

    /// Builds a map from explicit entries. Ids must be dense from 0 and raw
    /// ids unique and distinct from the unlabeled raw id.
    pub fn new(classes: Vec<ClassInfo>, ignore_id: ClassId, unlabeled_raw_id: u16) -> Result<Self, String> {
        for (i, c) in classes.iter().enumerate() {
            if c.id as usize != i {
                return Err(format!("class ids must be dense from 0, found {} at {}", c.id, i));
            }
            if c.raw_id == unlabeled_raw_id {
                return Err(format!("class {} reuses the unlabeled raw id", c.name));
            }
        }
        if (ignore_id as usize) < classes.len() {
            return Err(format!("ignore id {} collides with a class id", ignore_id));
        }
        let mut raw_lookup = vec![ignore_id; u16::MAX as usize + 1];
        for c in &classes {
            if raw_lookup[c.raw_id as usize] != ignore_id {
                return Err(format!("duplicate raw id {}", c.raw_id));
            }
            raw_lookup[c.raw_id as usize] = c.id;
        }
        Ok(Self { classes, ignore_id, unlabeled_raw_id, raw_lookup })
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn ignore_id(&self) -> ClassId {
        self.ignore_id
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.classes.get(id as usize).map(|c| c.name.as_str())
    }

    /// Color for visualization; ignore and unknown ids render black.
    pub fn color(&self, id: ClassId) -> [u8; 3] {
        self.classes.get(id as usize).map_or([0, 0, 0], |c| c.color)
    }

    pub fn is_valid(&self, id: ClassId) -> bool {
        id == self.ignore_id || (id as usize) < self.classes.len()
    }

    /// Remaps a raw semantic id. Returns `None` for unknown raw ids (which
    /// callers map to the ignore id and count).
    pub fn remap_raw(&self, raw: u16) -> Option<ClassId> {
        let id = self.raw_lookup[raw as usize];
        if id != self.ignore_id || raw == self.unlabeled_raw_id {
            Some(id)
        } else {
            None
        }
    }

    pub fn raw_of(&self, id: ClassId) -> u16 {
        self.classes.get(id as usize).map_or(self.unlabeled_raw_id, |c| c.raw_id)
    }
}

impl Default for ClassMap {
    fn default() -> Self {
        Self::standard()
    }
}
