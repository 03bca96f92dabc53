use std::sync::{Condvar, Mutex};

/// Counting semaphore bounding requests in flight.
#[derive(Debug)]
pub struct Limiter {
    capacity: usize,
    in_use: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a Limiter,
}

impl Limiter {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "limiter capacity must be positive");
        Self { capacity, in_use: Mutex::new(0), freed: Condvar::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut in_use = self.in_use.lock().expect("limiter lock");
        while *in_use >= self.capacity {
            in_use = self.freed.wait(in_use).expect("limiter lock");
        }
        *in_use += 1;
        Permit { limiter: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.limiter.in_use.lock().expect("limiter lock") -= 1;
        self.limiter.freed.notify_one();
    }
}
