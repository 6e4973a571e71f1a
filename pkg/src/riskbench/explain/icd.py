"""ICD-10 chapter grouping of (generalized) diagnosis codes."""

# (first code, last code, label); comparisons are on the 3-character prefix
CHAPTERS = (
    ("A00", "B99", "I Infectious"),
    ("C00", "D48", "II Neoplasms"),
    ("D50", "D89", "III Blood"),
    ("E00", "E90", "IV Endocrine"),
    ("F00", "F99", "V Mental"),
    ("G00", "G99", "VI Nervous"),
    ("H00", "H59", "VII Eye"),
    ("H60", "H95", "VIII Ear"),
    ("I00", "I99", "IX Circulatory"),
    ("J00", "J99", "X Respiratory"),
    ("K00", "K93", "XI Digestive"),
    ("L00", "L99", "XII Skin"),
    ("M00", "M99", "XIII Musculoskeletal"),
    ("N00", "N99", "XIV Genitourinary"),
    ("O00", "O99", "XV Pregnancy"),
    ("P00", "P96", "XVI Perinatal"),
    ("Q00", "Q99", "XVII Congenital"),
    ("R00", "R99", "XVIII Symptoms"),
    ("S00", "T98", "XIX Injury"),
    ("U00", "U99", "XXII Special"),
    ("V01", "Y98", "XX External"),
    ("Z00", "Z99", "XXI Health factors"),
)
CHAPTER_LABELS = tuple(label for _, _, label in CHAPTERS)
OTHER = "Other"


def icd_chapter(code: str) -> str:
    key = "".join(ch for ch in code.upper() if ch.isalnum())[:3]
    for lo, hi, label in CHAPTERS:
        if lo <= key <= hi:
            return label
    return OTHER
