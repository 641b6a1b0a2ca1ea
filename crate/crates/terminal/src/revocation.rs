use std::collections::VecDeque;

use campus_tag::TagUid;

pub const REVOCATION_CAPACITY: usize = 64;

/// Bounded FIFO of uids the coordinator has locked but whose cards have not
/// yet been seen at this terminal.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RevocationList {
    uids: VecDeque<TagUid>,
}

impl RevocationList {
    /// Adds `uid`, evicting the oldest entry when full. Re-adding an
    /// existing uid is a no-op.
    pub fn push(&mut self, uid: TagUid) {
        if self.contains(uid) {
            return;
        }
        if self.uids.len() == REVOCATION_CAPACITY {
            self.uids.pop_front();
        }
        self.uids.push_back(uid);
    }

    pub fn contains(&self, uid: TagUid) -> bool {
        self.uids.contains(&uid)
    }

    pub fn remove(&mut self, uid: TagUid) -> bool {
        let before = self.uids.len();
        self.uids.retain(|&u| u != uid);
        before != self.uids.len()
    }

    pub fn len(&self) -> usize {
        self.uids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.uids.is_empty()
    }
}
