import init, { encryptRgba, sampleImage, attackDemo, keystream } from "./pkg/neuracodec_web.js";

const SIZE = 128;
const $ = (id) => document.getElementById(id);

function randomKey() {
  const bytes = crypto.getRandomValues(new Uint8Array(32));
  return Array.from(bytes, (b) => b.toString(16).padStart(2, "0")).join("");
}

function showError(where, err) {
  where.textContent = String(err && err.message ? err.message : err);
  where.className = "err";
}

function drawRgba(canvas, width, height, rgba) {
  canvas.width = width;
  canvas.height = height;
  canvas.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(rgba), width, height), 0, 0);
}

function plainPixels() {
  return $("plain").getContext("2d").getImageData(0, 0, SIZE, SIZE).data;
}

function loadSample() {
  const cls = Math.floor(Math.random() * 3);
  drawRgba($("plain"), SIZE, SIZE, sampleImage($("key").value, SIZE, cls));
}

function loadFile(file) {
  const img = new Image();
  img.onload = () => {
    const canvas = $("plain");
    canvas.width = SIZE;
    canvas.height = SIZE;
    canvas.getContext("2d").drawImage(img, 0, 0, SIZE, SIZE);
    URL.revokeObjectURL(img.src);
  };
  img.src = URL.createObjectURL(file);
}

function encrypt() {
  const info = $("encinfo");
  info.className = "";
  try {
    const scheme = $("scheme").value;
    const view = encryptRgba($("key").value, scheme, SIZE, SIZE, plainPixels(), Number($("patch").value));
    const cipher = $("cipher");
    drawRgba(cipher, view.width, view.height, view.rgba());
    cipher.style.width = scheme === "neuracrypt" ? `${view.width * 2}px` : "256px";
    cipher.style.height = scheme === "neuracrypt" ? `${view.height * 8}px` : "256px";
    const range = `values in [${view.valueMin.toFixed(3)}, ${view.valueMax.toFixed(3)}]`;
    info.textContent = view.correlation === undefined
      ? `${view.height} tokens × ${view.width} features, ${range}`
      : `pixel correlation with input r = ${view.correlation.toFixed(4)}, ${range}`;
    view.free();
  } catch (err) {
    showError(info, err);
  }
}

function attack() {
  try {
    const json = attackDemo($("key").value, $("ascheme").value, Number($("acount").value), $("chain").checked);
    const report = JSON.parse(json);
    $("asummary").className = "";
    $("asummary").textContent =
      `accuracy ${report.accuracy} (${report.correct}/${report.samples})` +
      (report.no_collision_signal ? "; no collision signal" : "");
    $("areport").textContent = json;
  } catch (err) {
    showError($("asummary"), err);
  }
}

function drawStream() {
  try {
    const json = keystream($("key").value, $("label").value, Number($("ng").value), Number($("np").value));
    $("sreport").className = "";
    $("sreport").textContent = JSON.stringify(JSON.parse(json), null, 1);
  } catch (err) {
    showError($("sreport"), err);
  }
}

await init();
$("key").value = randomKey();
$("newkey").onclick = () => { $("key").value = randomKey(); };
$("sample").onclick = loadSample;
$("file").onchange = (e) => e.target.files[0] && loadFile(e.target.files[0]);
$("encrypt").onclick = encrypt;
$("attack").onclick = attack;
$("stream").onclick = drawStream;
loadSample();
$("status").textContent = "ready";
