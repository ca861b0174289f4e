//! Fan-out of events to subscribers through bounded queues.

use crate::protocol::{Event, EventEnvelope, PROTOCOL_VERSION};
use crossbeam_channel::{bounded, Receiver, Sender, TrySendError};
use std::sync::Mutex;

pub const SUBSCRIBER_QUEUE: usize = 1024;

pub struct Subscription {
    pub id: u64,
    pub events: Receiver<EventEnvelope>,
}

struct Inner {
    subs: Vec<(u64, Sender<EventEnvelope>)>,
    next_sub: u64,
    seq: u64,
}

/// Publishing never blocks: a subscriber whose queue is full is dropped,
/// which its receiver observes as a disconnect once drained.
pub struct Broadcaster {
    inner: Mutex<Inner>,
    capacity: usize,
}

impl Default for Broadcaster {
    fn default() -> Self {
        Self::new(SUBSCRIBER_QUEUE)
    }
}

impl Broadcaster {
    pub fn new(capacity: usize) -> Self {
        Broadcaster { inner: Mutex::new(Inner { subs: Vec::new(), next_sub: 1, seq: 0 }), capacity: capacity.max(1) }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn subscribe(&self) -> Subscription {
        let (tx, rx) = bounded(self.capacity);
        let mut g = self.lock();
        let id = g.next_sub;
        g.next_sub += 1;
        g.subs.push((id, tx));
        Subscription { id, events: rx }
    }

    pub fn unsubscribe(&self, id: u64) {
        self.lock().subs.retain(|(s, _)| *s != id);
    }

    pub fn subscriber_count(&self) -> usize {
        self.lock().subs.len()
    }

    /// Sends to every subscriber; returns the sequence number used.
    pub fn publish(&self, event: Event) -> u64 {
        let mut g = self.lock();
        g.seq += 1;
        let env = EventEnvelope { v: PROTOCOL_VERSION, seq: g.seq, event };
        g.subs.retain(|(_, tx)| match tx.try_send(env.clone()) {
            Ok(()) => true,
            Err(TrySendError::Full(_)) | Err(TrySendError::Disconnected(_)) => false,
        });
        env.seq
    }

    /// Sends to one subscriber only, e.g. the state snapshot on connect.
    pub fn send_to(&self, id: u64, event: Event) -> Option<u64> {
        let mut g = self.lock();
        g.seq += 1;
        let env = EventEnvelope { v: PROTOCOL_VERSION, seq: g.seq, event };
        let i = g.subs.iter().position(|(s, _)| *s == id)?;
        if g.subs[i].1.try_send(env.clone()).is_err() {
            g.subs.remove(i);
            return None;
        }
        Some(env.seq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(i: u64) -> Event {
        Event::Error { message: i.to_string() }
    }

    #[test]
    fn subscribers_see_identical_ordered_streams() {
        let b = Broadcaster::default();
        let (s1, s2) = (b.subscribe(), b.subscribe());
        for i in 0..10 {
            b.publish(ev(i));
        }
        let a: Vec<_> = s1.events.try_iter().collect();
        let c: Vec<_> = s2.events.try_iter().collect();
        assert_eq!(a, c);
        assert!(a.windows(2).all(|w| w[0].seq < w[1].seq));
    }

    #[test]
    fn slow_subscribers_are_dropped_without_blocking() {
        let b = Broadcaster::new(4);
        let slow = b.subscribe();
        let fast = b.subscribe();
        for i in 0..10 {
            b.publish(ev(i));
            fast.events.try_iter().for_each(drop);
        }
        assert_eq!(b.subscriber_count(), 1);
        assert_eq!(slow.events.try_iter().count(), 4);
        assert!(slow.events.recv().is_err());
        b.publish(ev(99));
        assert_eq!(fast.events.try_recv().unwrap().event, ev(99));
    }
}
