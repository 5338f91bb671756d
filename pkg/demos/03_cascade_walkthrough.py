"""One frame through the full cascade, stage by stage.

The detector here is a replay backend: a small text file of prerecorded
answers, keyed by image key and prompt. That makes every stage exactly
reproducible, which is how the pipeline is tested without a model server.

Scene: one motorcycle carrying two people. The driver wears a helmet,
the passenger does not.
"""

import io
import json

from moto_helmet import (
    MappingSeat,
    Role,
    replay_load,
    run_frame,
    write_cascade_csv,
)


def record(image_key, prompt, *dets):
    boxes = [{"x": x, "y": y, "w": w, "h": h, "score": s} for x, y, w, h, s in dets]
    return json.dumps({"image_key": image_key, "prompt": prompt, "detections": boxes})


# Stage 1 answers arrive in the detector's 960x960 input scale; the engine
# rescales them onto the 1920x1080 frame (x2 horizontally, x1.125
# vertically): (200,200,100,100) lands at (400,225,200,112.5). Expanding
# that by the crop margins (50 left/top/right, 0 bottom) and snapping to
# whole pixels gives the crop rect 350,175,300,163 seen in the keys below.
replay = "\n".join([
    record("demo/0", "motorcycle", (200, 200, 100, 100, 0.93)),
    # Stage 2: people inside the motorcycle crop, in crop-local coordinates.
    record("demo/0@350,175,300,163", "person",
           (60, 60, 40, 80, 0.91), (160, 70, 45, 85, 0.88)),
    # Stage 3: helmet lookups inside each person crop. The driver's crop
    # has one helmet hit; the passenger's crop has no record at all, which
    # reads as "nothing found".
    record("demo/0@410,235,40,80", "helmet", (8, 2, 24, 20, 0.85)),
]) + "\n"

backend = replay_load(replay)

# Stage 4 is a lookup table for this walkthrough; in production it is a
# classifier service reached the same way the detector is.
seats = MappingSeat({
    "demo/0@410,235,40,80": Role.DRIVER,
    "demo/0@510,245,45,85": Role.PASSENGER1,
})

out = run_frame("demo", 0, backend, seats)

print("motorcycles found:", len(out.motorcycles))
for m in out.motorcycles:
    print(f"  box ({m.box.x:.0f},{m.box.y:.0f},{m.box.w:.0f},{m.box.h:.1f})"
          f" score {m.score:.2f}")

print("riders found:", len(out.riders))
for r in out.riders:
    role = "?" if r.seat_role is None else r.seat_role.value
    print(f"  frame box ({r.person_box.x:.0f},{r.person_box.y:.0f},"
          f"{r.person_box.w:.0f},{r.person_box.h:.0f})"
          f"  helmet={r.helmet}  role={role}  class={r.composite.id}")

# Composite classes fold role and helmet into one label: driver+helmet is
# 2, passenger1 without one is 5. Even ids always mean helmeted.
buf = io.StringIO()
write_cascade_csv([out], buf)
print("\nprediction rows (video,frame,x,y,w,h,class,score):")
print(buf.getvalue(), end="")
