//! CICIoT2023 label vocabulary and the three label granularities.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// The seven attack categories. Benign traffic is not a category; it becomes
/// the eighth class under [`Granularity::Categories8`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Ddos,
    Dos,
    Recon,
    WebBased,
    BruteForce,
    Spoofing,
    Mirai,
}

pub const CATEGORY_COUNT: usize = 7;

impl Category {
    pub const ALL: [Category; CATEGORY_COUNT] = [
        Category::Ddos,
        Category::Dos,
        Category::Recon,
        Category::WebBased,
        Category::BruteForce,
        Category::Spoofing,
        Category::Mirai,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Category> {
        Category::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Ddos => "DDoS",
            Category::Dos => "DoS",
            Category::Recon => "Recon",
            Category::WebBased => "Web-based",
            Category::BruteForce => "Brute Force",
            Category::Spoofing => "Spoofing",
            Category::Mirai => "Mirai",
        }
    }
}

pub const BENIGN_LABEL: &str = "BenignTraffic";

/// The 34 labels of the published CSVs (33 attacks + benign), in a fixed
/// order that doubles as the attacks34 class order.
pub const CICIOT2023_LABELS: [(&str, Option<Category>); 34] = [
    ("DDoS-ACK_Fragmentation", Some(Category::Ddos)),
    ("DDoS-HTTP_Flood", Some(Category::Ddos)),
    ("DDoS-ICMP_Flood", Some(Category::Ddos)),
    ("DDoS-ICMP_Fragmentation", Some(Category::Ddos)),
    ("DDoS-PSHACK_Flood", Some(Category::Ddos)),
    ("DDoS-RSTFINFlood", Some(Category::Ddos)),
    ("DDoS-SYN_Flood", Some(Category::Ddos)),
    ("DDoS-SlowLoris", Some(Category::Ddos)),
    ("DDoS-SynonymousIP_Flood", Some(Category::Ddos)),
    ("DDoS-TCP_Flood", Some(Category::Ddos)),
    ("DDoS-UDP_Flood", Some(Category::Ddos)),
    ("DDoS-UDP_Fragmentation", Some(Category::Ddos)),
    ("DoS-HTTP_Flood", Some(Category::Dos)),
    ("DoS-SYN_Flood", Some(Category::Dos)),
    ("DoS-TCP_Flood", Some(Category::Dos)),
    ("DoS-UDP_Flood", Some(Category::Dos)),
    ("Recon-HostDiscovery", Some(Category::Recon)),
    ("Recon-OSScan", Some(Category::Recon)),
    ("Recon-PingSweep", Some(Category::Recon)),
    ("Recon-PortScan", Some(Category::Recon)),
    ("VulnerabilityScan", Some(Category::Recon)),
    ("Backdoor_Malware", Some(Category::WebBased)),
    ("BrowserHijacking", Some(Category::WebBased)),
    ("CommandInjection", Some(Category::WebBased)),
    ("SqlInjection", Some(Category::WebBased)),
    ("Uploading_Attack", Some(Category::WebBased)),
    ("XSS", Some(Category::WebBased)),
    ("DictionaryBruteForce", Some(Category::BruteForce)),
    ("DNS_Spoofing", Some(Category::Spoofing)),
    ("MITM-ArpSpoofing", Some(Category::Spoofing)),
    ("Mirai-greeth_flood", Some(Category::Mirai)),
    ("Mirai-greip_flood", Some(Category::Mirai)),
    ("Mirai-udpplain", Some(Category::Mirai)),
    (BENIGN_LABEL, None),
];

// Unprefixed flood names are listed under both DDoS and DoS; they resolve
// to DDoS.
const ALIASES: [(&str, &str); 5] = [
    ("TCP Flood", "DDoS-TCP_Flood"),
    ("UDP Flood", "DDoS-UDP_Flood"),
    ("SYN Flood", "DDoS-SYN_Flood"),
    ("HTTP Flood", "DDoS-HTTP_Flood"),
    ("Benign", BENIGN_LABEL),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Binary,
    #[default]
    Categories8,
    Attacks34,
}

impl Granularity {
    pub fn class_count(self) -> usize {
        match self {
            Granularity::Binary => 2,
            Granularity::Categories8 => 8,
            Granularity::Attacks34 => 34,
        }
    }
}

impl std::str::FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "binary" | "2" => Ok(Granularity::Binary),
            "categories8" | "8" => Ok(Granularity::Categories8),
            "attacks34" | "34" => Ok(Granularity::Attacks34),
            other => Err(format!("unknown granularity `{other}`")),
        }
    }
}

/// Case- and punctuation-insensitive key: `DDoS-TCP_Flood` == `ddos tcp flood`.
fn normalize_name(name: &str) -> String {
    name.chars()
        .filter(char::is_ascii_alphanumeric)
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

/// Where a raw label lands under a given granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelTarget {
    pub class: usize,
    /// `None` for benign traffic.
    pub category: Option<Category>,
}

/// Raw attack name → class index under one granularity.
#[derive(Debug, Clone)]
pub struct CategoryMap {
    granularity: Granularity,
    classes: Vec<String>,
    mapping: HashMap<String, LabelTarget>,
}

impl CategoryMap {
    pub fn new(granularity: Granularity) -> Self {
        let classes: Vec<String> = match granularity {
            Granularity::Binary => vec!["Benign".into(), "Malicious".into()],
            Granularity::Categories8 => Category::ALL
                .iter()
                .map(|c| c.name().to_string())
                .chain(std::iter::once("Benign".to_string()))
                .collect(),
            Granularity::Attacks34 => CICIOT2023_LABELS
                .iter()
                .map(|(n, _)| n.to_string())
                .collect(),
        };
        let mut mapping = HashMap::new();
        for (i, &(name, category)) in CICIOT2023_LABELS.iter().enumerate() {
            let class = match (granularity, category) {
                (Granularity::Binary, None) => 0,
                (Granularity::Binary, Some(_)) => 1,
                (Granularity::Categories8, None) => CATEGORY_COUNT,
                (Granularity::Categories8, Some(c)) => c.index(),
                (Granularity::Attacks34, _) => i,
            };
            mapping.insert(normalize_name(name), LabelTarget { class, category });
        }
        for (alias, target) in ALIASES {
            let t = mapping[&normalize_name(target)];
            mapping.insert(normalize_name(alias), t);
        }
        CategoryMap {
            granularity,
            classes,
            mapping,
        }
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn lookup(&self, raw: &str) -> Option<LabelTarget> {
        self.mapping.get(&normalize_name(raw)).copied()
    }

    pub fn benign_class(&self) -> usize {
        self.lookup(BENIGN_LABEL)
            .expect("benign is always mapped")
            .class
    }
}
