import init, { filterScene, detect, hardnetLoss } from "./pkg/matchforge_demo.js";

const $ = (id) => document.getElementById(id);

function report(el, fn) {
  try {
    el.classList.remove("error");
    fn();
  } catch (e) {
    el.classList.add("error");
    el.textContent = String(e.message ?? e);
  }
}

function drawScene() {
  report($("scene-stats"), () => {
    const view = filterScene(
      Number($("scene-seed").value),
      Number($("scene-outliers").value),
      Number($("scene-noise").value),
    );
    const canvas = $("scene-canvas");
    const ctx = canvas.getContext("2d");
    const half = canvas.width / 2;
    const s = half / view.size();
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    ctx.strokeStyle = "#999";
    ctx.strokeRect(0, 0, half, canvas.height);
    ctx.strokeRect(half, 0, half, canvas.height);

    const seg = view.segments();
    const kept = view.kept();
    const correct = view.correct();
    // rejected first so kept matches stay on top
    for (const pass of [0, 1]) {
      for (let i = 0; i < kept.length; i++) {
        if (kept[i] !== pass) continue;
        ctx.strokeStyle = pass ? (correct[i] ? "rgba(0,150,0,0.8)" : "rgba(210,0,0,0.9)") : "rgba(0,0,0,0.12)";
        ctx.beginPath();
        ctx.moveTo(seg[4 * i] * s, seg[4 * i + 1] * s);
        ctx.lineTo(half + seg[4 * i + 2] * s, seg[4 * i + 3] * s);
        ctx.stroke();
      }
    }
    const nKept = kept.reduce((a, b) => a + b, 0);
    $("scene-stats").textContent =
      `${kept.length} candidates, ${nKept} kept, precision ${view.precision().toFixed(3)}, recall ${view.recall().toFixed(3)}`;
    view.free();
  });
}

function drawDetection() {
  report($("det-stats"), () => {
    const view = detect(
      Number($("det-seed").value),
      Number($("det-peaks").value),
      Number($("det-threshold").value),
      Number($("det-radius").value),
    );
    const w = view.width();
    const h = view.height();
    const heat = view.heatmap();
    let max = 0;
    for (const v of heat) max = Math.max(max, v);
    const img = new ImageData(w, h);
    for (let i = 0; i < heat.length; i++) {
      const g = Math.round(255 * Math.sqrt(heat[i] / (max || 1)));
      img.data.set([g, g, g, 255], 4 * i);
    }
    const canvas = $("det-canvas");
    const ctx = canvas.getContext("2d");
    const scratch = new OffscreenCanvas(w, h);
    scratch.getContext("2d").putImageData(img, 0, 0);
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(scratch, 0, 0, canvas.width, canvas.height);

    const s = canvas.width / w;
    const kps = view.keypoints();
    ctx.strokeStyle = "#f80";
    for (let i = 0; i < kps.length; i += 3) {
      ctx.beginPath();
      ctx.arc((kps[i] + 0.5) * s, (kps[i + 1] + 0.5) * s, 6, 0, 2 * Math.PI);
      ctx.stroke();
    }
    $("det-stats").textContent = `${w}x${h} heatmap, ${kps.length / 3} keypoints`;
    view.free();
  });
}

function computeLoss() {
  report($("loss-stats"), () => {
    const values = $("loss-input").value.trim().split(/\s+/).map(Number);
    const view = hardnetLoss(Float64Array.from(values));
    const per = Array.from(view.perSample(), (v) => v.toFixed(4)).join(", ");
    $("loss-stats").textContent = `loss ${view.loss().toFixed(6)}  per pair [${per}]`;
    view.free();
  });
}

await init();
$("scene-outliers").addEventListener("input", (e) => {
  $("scene-outliers-val").textContent = Number(e.target.value).toFixed(2);
});
$("scene-run").addEventListener("click", drawScene);
$("det-run").addEventListener("click", drawDetection);
$("loss-run").addEventListener("click", computeLoss);
drawScene();
drawDetection();
computeLoss();
