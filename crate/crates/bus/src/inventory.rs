use campus_tag::{ReaderFieldModel, TagUid};

/// Tags currently near one reader, with their distance in centimetres.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FieldPresence {
    tags: Vec<(TagUid, u16)>,
}

impl FieldPresence {
    pub fn new() -> Self {
        Self::default()
    }

    /// Places `uid` at `distance_cm`, moving it if already present.
    pub fn place(&mut self, uid: TagUid, distance_cm: u16) {
        self.remove(uid);
        self.tags.push((uid, distance_cm));
    }

    pub fn remove(&mut self, uid: TagUid) {
        self.tags.retain(|(u, _)| *u != uid);
    }

    pub fn tags(&self) -> &[(TagUid, u16)] {
        &self.tags
    }
}

/// Tags the reader can see in one cycle: in range (`distance <= range`),
/// ascending by uid, at most `capacity` of them.
pub fn inventory(field: &FieldPresence, reader: &ReaderFieldModel) -> Vec<TagUid> {
    let mut seen: Vec<TagUid> = field
        .tags
        .iter()
        .filter(|(_, d)| reader.in_range(*d))
        .map(|(u, _)| *u)
        .collect();
    seen.sort_unstable();
    seen.dedup();
    seen.truncate(reader.capacity());
    seen
}
