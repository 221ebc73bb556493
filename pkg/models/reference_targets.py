"""Published reference numbers, reported next to local metrics for users who supply the full corpus."""

# binary ad hominem prediction accuracy
BINARY_ACCURACY = {
    "human": 0.878,
    "cnn": 0.810,
    "bilstm": 0.782,
}

# Spearman rho against averaged crowd scores
REGRESSION_RHO = {
    "controversy": {
        "human": 0.804,
        "cnn-lda": 0.569,
        "cnn": 0.559,
        "bilstm": 0.539,
    },
    "reasonableness": {
        "human": 0.646,
        "cnn-lda": 0.385,
        "cnn": 0.332,
        "bilstm": 0.320,
    },
}

# thread-context triplet prediction accuracy
TRIPLET_ACCURACY = {
    "ssae": 0.7208,
    "cnn": 0.7095,
}

CROWD_KAPPA = 0.79
CORPUS_AH_RATE = 0.002
SINGLE_AH_LAST_FRACTION = 0.486
OUT_OF_BLUE_FRACTION = 0.66
ANNOTATED_KS = {"statistic": 0.13, "p_value": 7.97e-7}
EXTRAPOLATED_KS = {"statistic": 0.14, "p_value": 1e-18}

AD_HOMINEM_TYPES = [
    "abusive",
    "tu quoque",
    "circumstantial",
    "bias",
    "guilt by association",
    "other",
]

SPAN_TYPES = [
    "vulgar insult",
    "illiteracy insult",
    "condescension",
    "ridiculing and sarcasm",
    "idiot insults",
    "accusation of stupidity",
    "lack of argumentation skills",
    "accusation of trolling",
    "accusation of ignorance",
    "you didn't read what I wrote",
    "what you say is idiotic",
    "accusation of lying",
    "you don't face the facts",
    "accusation of fallacies",
    "other",
]

# what the attention model picks up in the posts leading to an attack
TRIGGER_PHENOMENA = [
    "vulgar intensifiers or interrogatives",
    "direct imperatives",
    "accusing of believing in propaganda",
    "accusation of fallacies or bad argumentation practice",
    "reinterpreting opponent's positions",
    "accusation of not reading the other party's arguments",
    "pointing at missing or unsupported evidence",
    "uppercase",
    "sarcasm",
    "mentions of trolling",
    "loaded keywords",
]


def reference_rows(kind, task="binary"):
    """Reference table rows for a report: (system, value) pairs, local model first"""
    if task == "binary":
        table = BINARY_ACCURACY
    elif task == "triplets":
        table = TRIPLET_ACCURACY
    elif task in REGRESSION_RHO:
        table = REGRESSION_RHO[task]
    else:
        raise ValueError(f"no reference targets for task {task}")
    rows = [{"system": system, "reference": value, "matches_model": system == kind}
            for system, value in table.items()]
    return rows


def corpus_reference_items():
    return [
        ("ad_hominem_rate", CORPUS_AH_RATE),
        ("single_ah_last_fraction", SINGLE_AH_LAST_FRACTION),
        ("attacker_out_of_blue_fraction", OUT_OF_BLUE_FRACTION),
    ]


def extrapolation_reference_items():
    items = [(f"annotated_ks_{key}", value) for key, value in ANNOTATED_KS.items()]
    items += [(f"extrapolated_ks_{key}", value) for key, value in EXTRAPOLATED_KS.items()]
    return items


def taxonomy_sections():
    """Reference taxonomies as (title, entries) pairs"""
    return [
        ("ad hominem types", AD_HOMINEM_TYPES),
        ("ad hominem span types", SPAN_TYPES),
        ("attack triggers", TRIGGER_PHENOMENA),
    ]
