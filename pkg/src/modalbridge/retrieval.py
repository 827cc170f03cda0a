"""Cross-modal retrieval scoring: cosine ranking and mean average precision.

Both directions are evaluated (image queries against the text gallery
and vice versa). Relevance is exact label equality; average precision
is taken over the full ranked gallery, not a top-k cut. Ties in cosine
similarity break toward the lower original gallery index so rankings
are reproducible.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, UndefinedQueryError
from .tensor import as_matrix


@dataclass
class RetrievalReport:
    """MAP for both query directions plus the per-query AP values
    (queries with no relevant gallery item are excluded and absent)."""

    map_img2txt: float
    map_txt2img: float
    map_avg: float
    ap_img2txt: list
    ap_txt2img: list

    @property
    def per_query_ap(self) -> list:
        """All per-query APs, image-query block first."""
        return list(self.ap_img2txt) + list(self.ap_txt2img)


def average_precision(relevance, total_relevant: int) -> float:
    """AP of a ranked binary relevance list over the whole gallery.

    AP = (1/R) * sum over ranks k of (hits-at-k / k) for relevant k,
    with R = total_relevant. Accumulation is a plain left-to-right
    scalar scan, so a naive reimplementation sums the identical
    sequence of terms and reproduces the value exactly.
    """
    if total_relevant < 1:
        raise UndefinedQueryError("query has no relevant gallery items")
    hits = 0
    acc = 0.0
    for k, rel in enumerate(relevance, start=1):
        if rel:
            hits += 1
            acc += hits / k
    if hits != total_relevant:
        raise ValueError(f"relevance list contains {hits} relevant items "
                         f"but total_relevant={total_relevant}")
    return acc / total_relevant


def rank_gallery(query_rep: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """Gallery indices by descending cosine similarity to the query.

    Equal similarities order by ascending original index. Zero-norm
    query or gallery rows are rejected: cosine similarity is undefined
    for them.
    """
    q = np.asarray(query_rep, dtype=np.float64).reshape(-1)
    g = as_matrix(gallery, "gallery")
    if g.shape[0] < 1:
        raise ValueError("gallery must be non-empty")
    if g.shape[1] != q.shape[0]:
        raise ValueError(f"query dim {q.shape[0]} does not match gallery "
                         f"dim {g.shape[1]}")
    qn = np.linalg.norm(q)
    gn = np.linalg.norm(g, axis=1)
    if qn == 0.0:
        raise DegenerateInputError("zero-norm query representation")
    if np.any(gn == 0.0):
        raise DegenerateInputError("zero-norm gallery representation")
    sims = (g @ q) / (gn * qn)
    # lexsort: primary key last; negation makes it descending, the
    # index key settles ties deterministically.
    return np.lexsort((np.arange(g.shape[0]), -sims))


def _direction(queries, query_labels, gallery, gallery_labels, name):
    aps = []
    skipped = 0
    for i in range(queries.shape[0]):
        total = int(np.sum(gallery_labels == query_labels[i]))
        if total == 0:
            skipped += 1
            continue
        order = rank_gallery(queries[i], gallery)
        rel = (gallery_labels[order] == query_labels[i]).astype(np.int64)
        aps.append(average_precision(rel.tolist(), total))
    if skipped:
        warnings.warn(f"{name}: excluded {skipped} queries with no relevant "
                      f"gallery item from the MAP mean")
    if not aps:
        raise UndefinedQueryError(f"{name}: no query has a relevant gallery item")
    return sum(aps) / len(aps), aps


def evaluate(img_reps: np.ndarray, txt_reps: np.ndarray, img_labels,
             txt_labels) -> RetrievalReport:
    """Full two-direction protocol on common representations.

    Each image queries the whole text gallery and each text queries the
    whole image gallery; per-query AP uses label-equality relevance,
    and each direction's MAP is the mean over its queries (left-to-right
    sum, so repeated calls are bit-identical).
    """
    img = as_matrix(img_reps, "img_reps")
    txt = as_matrix(txt_reps, "txt_reps")
    il = np.asarray(img_labels, dtype=np.int64)
    tl = np.asarray(txt_labels, dtype=np.int64)
    if il.shape != (img.shape[0],) or tl.shape != (txt.shape[0],):
        raise ValueError("labels must align with representation rows")
    m_i2t, ap_i2t = _direction(img, il, txt, tl, "img2txt")
    m_t2i, ap_t2i = _direction(txt, tl, img, il, "txt2img")
    return RetrievalReport(
        map_img2txt=m_i2t,
        map_txt2img=m_t2i,
        map_avg=(m_i2t + m_t2i) / 2.0,
        ap_img2txt=ap_i2t,
        ap_txt2img=ap_t2i,
    )


REPORT_HEADER = "task,map"


def write_report_csv(path, report: RetrievalReport) -> None:
    """Three-row summary CSV: img2txt, txt2img, average."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(REPORT_HEADER + "\n")
        f.write(f"img2txt,{repr(report.map_img2txt)}\n")
        f.write(f"txt2img,{repr(report.map_txt2img)}\n")
        f.write(f"average,{repr(report.map_avg)}\n")


def write_per_query_csv(path, report: RetrievalReport) -> None:
    """Dump every per-query AP; query_index counts included queries
    per direction, in query order."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("task,query_index,ap\n")
        for task, aps in (("img2txt", report.ap_img2txt),
                          ("txt2img", report.ap_txt2img)):
            for i, ap in enumerate(aps):
                f.write(f"{task},{i},{repr(ap)}\n")


def format_report_table(report: RetrievalReport) -> str:
    """Aligned text table with Image->Text, Text->Image, Average rows."""
    rows = (("Image->Text", report.map_img2txt),
            ("Text->Image", report.map_txt2img),
            ("Average", report.map_avg))
    lines = [f"{'Task':<12} {'MAP':>8}", "-" * 21]
    lines += [f"{name:<12} {value:>8.4f}" for name, value in rows]
    return "\n".join(lines)
