use serde::{Deserialize, Serialize};

/// Dimension carrying the HumAID humanitarian class.
pub const DISASTER_EVENT: &str = "disaster_event";
/// Binary dimension derived from [`DISASTER_EVENT`].
pub const SUB_EVENT: &str = "sub_event";
pub const SUBEVENT_POST: &str = "subevent_post";
pub const NON_SUBEVENT_POST: &str = "non_subevent_post";

/// The nine retained HumAID classes, the two excluded ones, and the four
/// that denote a sub-event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisasterTaxonomy {
    pub classes: Vec<String>,
    pub excluded: Vec<String>,
    pub subevent_classes: Vec<String>,
}

impl DisasterTaxonomy {
    pub fn humaid() -> Self {
        let owned = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        DisasterTaxonomy {
            classes: owned(&[
                "caution_and_advice",
                "sympathy_and_support",
                "requests_or_urgent_needs",
                "infrastructure_and_utility_damage",
                "rescue_volunteering_or_donation_effort",
                "not_humanitarian",
                "displaced_people_and_evacuations",
                "injured_or_dead_people",
                "missing_or_found_people",
            ]),
            excluded: owned(&["dont_know_cant_judge", "other_relevant_information"]),
            subevent_classes: owned(&[
                "infrastructure_and_utility_damage",
                "displaced_people_and_evacuations",
                "injured_or_dead_people",
                "missing_or_found_people",
            ]),
        }
    }

    pub fn is_excluded(&self, class: &str) -> bool {
        self.excluded.iter().any(|c| c == class)
    }

    pub fn is_subevent(&self, class: &str) -> bool {
        self.subevent_classes.iter().any(|c| c == class)
    }

    pub fn contains(&self, class: &str) -> bool {
        self.classes.iter().any(|c| c == class)
    }
}

impl Default for DisasterTaxonomy {
    fn default() -> Self {
        DisasterTaxonomy::humaid()
    }
}
