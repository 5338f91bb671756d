"""Boxes, IoU, crop arithmetic and greedy matching on a tiny scene.

Everything downstream (the cascade, the sweep harness, the metrics) is
built from the handful of operations shown here, so this is the place to
start reading.
"""

from moto_helmet import (
    Box,
    ImageSize,
    Margins,
    ScoredDetection,
    expand_box,
    frame_to_crop,
    crop_to_frame,
    iou,
    match_detections,
    precision_recall,
    rescale_box,
)
from moto_helmet.geometry import FRAME, MODEL_INPUT, crop_space

frame = ImageSize(1920, 1080)
model_input = ImageSize(960, 960)

# A detector answers in its own input resolution. Map one of its boxes
# back onto the frame: x scales by 2, y by 1080/960.
detected = Box(480, 480, 96, 96, space=MODEL_INPUT)
on_frame = rescale_box(detected, model_input, frame, space=FRAME)
print("detected at model scale:", detected)
print("same box on the frame:  ", on_frame)

# Crops around a detection get breathing room on three sides (none below,
# the bottom edge already hugs the road).
margins = Margins(left=50, top=50, right=50, bottom=0)
crop = expand_box(Box(100, 100, 200, 300), margins, frame)
print("expanded crop:", crop)

# Boxes found inside a crop live in crop-local coordinates until we
# translate them back. The translation is exactly invertible.
local = Box(20, 30, 60, 110, space=crop_space(crop.x, crop.y))
in_frame = crop_to_frame(local, (crop.x, crop.y))
print("crop-local", local, "-> frame", in_frame)
print("and back:  ", frame_to_crop(in_frame, (crop.x, crop.y)))

# Scoring predictions against ground truth. Two annotated riders, three
# detections: one good hit, one near miss (IoU below 0.5), one duplicate.
gts = [Box(100, 100, 50, 100), Box(300, 120, 50, 100)]
dets = [
    ScoredDetection(Box(102, 98, 50, 104), 0.95, "person"),  # good
    ScoredDetection(Box(330, 150, 50, 100), 0.80, "person"),  # drifted off
    ScoredDetection(Box(104, 100, 50, 100), 0.60, "person"),  # double count
]
for d in dets:
    print(f"  score {d.score:.2f}  IoU vs gt0 {iou(d.box, gts[0]):.3f}"
          f"  IoU vs gt1 {iou(d.box, gts[1]):.3f}")

result = match_detections(dets, gts, iou_threshold=0.5)
print("tp", result.tp, "fp", result.fp, "fn", result.fn)
print("matched pairs (det, gt, iou):", result.matched_pairs)

precision, recall = precision_recall(result.tp, result.fp, result.fn)
print(f"precision {precision:.3f}  recall {recall:.3f}")

# Matching is greedy in score order, so the 0.95 detection claims gt0 and
# the 0.60 duplicate has nothing left to take. The 0.80 detection overlaps
# gt1 by less than the 0.5 threshold and counts as a false positive even
# though a human would call it "close".
