use crate::error::{contract, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Reward,
    Penalty,
}

/// One Tsetlin automaton with `states` states; states above the midpoint include.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Automaton {
    state: u16,
    states: u16,
}

impl Automaton {
    pub fn new(state: u16, states: u16) -> Result<Self> {
        check_states(states)?;
        if state == 0 || state > states {
            return Err(contract(format!("state {state} outside 1..={states}")));
        }
        Ok(Self { state, states })
    }

    pub fn state(self) -> u16 {
        self.state
    }

    pub fn includes(self) -> bool {
        self.state > self.states / 2
    }

    /// Reward moves away from the include/exclude boundary, penalty moves
    /// toward it and crosses it from the state adjacent to the boundary.
    pub fn transition(self, action: Action) -> Self {
        let toward_include = matches!(
            (action, self.includes()),
            (Action::Reward, true) | (Action::Penalty, false)
        );
        let state = if toward_include {
            increment(self.state, self.states)
        } else {
            decrement(self.state)
        };
        Self { state, ..self }
    }
}

pub(crate) fn check_states(states: u16) -> Result<()> {
    if states < 2 || states % 2 != 0 || states == u16::MAX {
        return Err(contract(format!("automaton state count {states} must be even and at least 2")));
    }
    Ok(())
}

#[inline]
pub(crate) fn increment(state: u16, states: u16) -> u16 {
    if state < states {
        state + 1
    } else {
        state
    }
}

#[inline]
pub(crate) fn decrement(state: u16) -> u16 {
    if state > 1 {
        state - 1
    } else {
        state
    }
}
