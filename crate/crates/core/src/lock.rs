use lock_api::RawMutex as _;
use parking_lot::RawMutex;

/// Per-node mutex. Guards release on drop.
pub(crate) struct NodeLock(RawMutex);

pub(crate) struct NodeGuard<'a>(&'a RawMutex);

impl NodeLock {
    pub(crate) const fn new() -> Self {
        NodeLock(RawMutex::INIT)
    }

    pub(crate) fn lock(&self) -> NodeGuard<'_> {
        self.0.lock();
        NodeGuard(&self.0)
    }
}

impl Drop for NodeGuard<'_> {
    fn drop(&mut self) {
        // SAFETY: a guard exists only while its mutex is held by this thread.
        unsafe { self.0.unlock() }
    }
}
