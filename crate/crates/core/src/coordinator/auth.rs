use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Admin,
    Experimenter,
    Tester,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Submit,
    ViewJob,
    EditJob,
    CancelJob,
    FetchArtifacts,
    ListDevices,
    RegisterVantagePoint,
    JoinSession,
}

impl Action {
    pub const ALL: [Action; 8] = [
        Action::Submit,
        Action::ViewJob,
        Action::EditJob,
        Action::CancelJob,
        Action::FetchArtifacts,
        Action::ListDevices,
        Action::RegisterVantagePoint,
        Action::JoinSession,
    ];
}

/// What a matrix cell grants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grant {
    Allow,
    /// Only on resources the principal owns.
    Owner,
    /// Only on resources explicitly shared with the principal.
    Shared,
    Deny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Allow,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub id: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenEntry {
    pub token: String,
    pub principal: String,
    pub role: Role,
}

/// Ownership facts about the resource an action targets.
#[derive(Debug, Clone, Copy, Default)]
pub struct Resource<'a> {
    pub owner: Option<&'a str>,
    pub shared_with: &'a [String],
}

impl<'a> Resource<'a> {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn owned_by(owner: &'a str) -> Self {
        Self {
            owner: Some(owner),
            shared_with: &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleMatrix {
    cells: BTreeMap<(Role, Action), Grant>,
}

impl Default for RoleMatrix {
    /// Admins may do anything. Experimenters submit jobs and manage their
    /// own; changing a submitted job needs an admin. Testers only join
    /// sessions shared with them.
    fn default() -> Self {
        use Action::*;
        let mut cells = BTreeMap::new();
        for a in Action::ALL {
            cells.insert((Role::Admin, a), Grant::Allow);
            cells.insert((Role::Tester, a), Grant::Deny);
        }
        cells.insert((Role::Tester, JoinSession), Grant::Shared);
        for (a, g) in [
            (Submit, Grant::Allow),
            (ViewJob, Grant::Owner),
            (EditJob, Grant::Deny),
            (CancelJob, Grant::Owner),
            (FetchArtifacts, Grant::Owner),
            (ListDevices, Grant::Allow),
            (RegisterVantagePoint, Grant::Deny),
            (JoinSession, Grant::Owner),
        ] {
            cells.insert((Role::Experimenter, a), g);
        }
        Self { cells }
    }
}

impl RoleMatrix {
    pub fn grant(&self, role: Role, action: Action) -> Grant {
        if role == Role::Admin {
            return Grant::Allow;
        }
        self.cells
            .get(&(role, action))
            .copied()
            .unwrap_or(Grant::Deny)
    }

    pub fn set(&mut self, role: Role, action: Action, grant: Grant) {
        if role != Role::Admin {
            self.cells.insert((role, action), grant);
        }
    }

    pub fn decide(
        &self,
        principal: &Principal,
        action: Action,
        resource: Resource<'_>,
    ) -> Decision {
        let ok = match self.grant(principal.role, action) {
            Grant::Allow => true,
            Grant::Owner => resource.owner == Some(principal.id.as_str()),
            Grant::Shared => resource.shared_with.contains(&principal.id),
            Grant::Deny => false,
        };
        if ok {
            Decision::Allow
        } else {
            Decision::Deny
        }
    }
}

/// Token lookup plus the matrix. Unknown tokens are always denied.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Authorizer {
    pub matrix: RoleMatrix,
    tokens: BTreeMap<String, Principal>,
}

impl Authorizer {
    pub fn new(matrix: RoleMatrix, tokens: &[TokenEntry]) -> Self {
        Self {
            matrix,
            tokens: tokens
                .iter()
                .map(|t| {
                    (
                        t.token.clone(),
                        Principal {
                            id: t.principal.clone(),
                            role: t.role,
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn principal(&self, token: &str) -> Option<&Principal> {
        self.tokens.get(token)
    }

    pub fn authorize(&self, token: &str, action: Action, resource: Resource<'_>) -> Decision {
        match self.principal(token) {
            Some(p) => self.matrix.decide(p, action, resource),
            None => Decision::Deny,
        }
    }
}
