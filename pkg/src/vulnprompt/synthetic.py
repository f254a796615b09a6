"""Deterministic synthetic corpora for tests and desk-scale experiments.

Functions come in families: members share a long body and differ in the
function name suffix and one constant, so within-family token-shingle
similarity stays high (the similarity index finds family members as
candidates) while cross-family similarity stays low. Vulnerable families
contain classically risky calls; benign families use their bounded
counterparts, which gives the built-in classifier a learnable signal.
"""

from __future__ import annotations

import random

from .corpus import Corpus, FunctionRecord

_VULNERABLE_BODIES = (
    """int parse_header_{name}(const char *input, size_t len) {{
    char buffer[{size}];
    size_t count = 0;
    for (size_t i = 0; i < len; i++) {{
        if (input[i] == ':') {{
            count++;
        }}
    }}
    strcpy(buffer, input);
    int checksum = {constant};
    for (size_t j = 0; j < count; j++) {{
        checksum += buffer[j] * 31;
    }}
    return checksum % 97;
}}""",
    """void log_message_{name}(const char *user, const char *text) {{
    char line[{size}];
    int severity = {constant};
    sprintf(line, "%s: %s", user, text);
    if (severity > 3) {{
        severity = 3;
    }}
    for (int i = 0; line[i] != 0; i++) {{
        if (line[i] == '\\n') {{
            line[i] = ' ';
        }}
    }}
    write_log(severity, line);
}}""",
    """int read_block_{name}(FILE *fp, char *out, int limit) {{
    char staging[{size}];
    int total = {constant};
    gets(staging);
    while (total < limit) {{
        int chunk = fgetc(fp);
        if (chunk < 0) {{
            break;
        }}
        out[total] = (char) chunk;
        total += 1;
    }}
    memcpy(out, staging, limit);
    return total;
}}""",
)

_BENIGN_BODIES = (
    """int parse_header_{name}(const char *input, size_t len) {{
    char buffer[{size}];
    size_t count = 0;
    for (size_t i = 0; i < len; i++) {{
        if (input[i] == ':') {{
            count++;
        }}
    }}
    strncpy(buffer, input, sizeof(buffer) - 1);
    buffer[sizeof(buffer) - 1] = 0;
    int checksum = {constant};
    for (size_t j = 0; j < count && j < sizeof(buffer); j++) {{
        checksum += buffer[j] * 31;
    }}
    return checksum % 97;
}}""",
    """void log_message_{name}(const char *user, const char *text) {{
    char line[{size}];
    int severity = {constant};
    snprintf(line, sizeof(line), "%s: %s", user, text);
    if (severity > 3) {{
        severity = 3;
    }}
    for (int i = 0; line[i] != 0; i++) {{
        if (line[i] == '\\n') {{
            line[i] = ' ';
        }}
    }}
    write_log(severity, line);
}}""",
    """int read_block_{name}(FILE *fp, char *out, int limit) {{
    char staging[{size}];
    int total = {constant};
    if (fgets(staging, sizeof(staging), fp) == NULL) {{
        return total;
    }}
    while (total < limit) {{
        int chunk = fgetc(fp);
        if (chunk < 0) {{
            break;
        }}
        out[total] = (char) chunk;
        total += 1;
    }}
    return total;
}}""",
)


def make_corpus(
    families: int = 5,
    members: int = 10,
    seed: int = 0,
    project: str = "synthetic",
) -> Corpus:
    """Build a labeled corpus of ``families * members`` functions.

    Families alternate vulnerable/benign; generation is deterministic for a
    seed, and every member of a family is a near-duplicate of its siblings.
    """
    rng = random.Random(seed)
    records: list[FunctionRecord] = []
    for fam in range(families):
        vulnerable = fam % 2 == 0
        bodies = _VULNERABLE_BODIES if vulnerable else _BENIGN_BODIES
        template = bodies[fam % len(bodies)]
        size = rng.choice((64, 128, 256))
        for member in range(members):
            source = template.format(
                name=f"f{fam}_{member}",
                size=size,
                constant=rng.randint(1, 9),
            )
            records.append(
                FunctionRecord(
                    id=f"fam{fam}_m{member}",
                    project=project,
                    source=source,
                    label=1 if vulnerable else 0,
                )
            )
    return Corpus(records=tuple(records))
