import { OrbitCamera, attachOrbitControls } from "./camera.js";
import { Hud } from "./hud.js";
import { PointRenderer } from "./renderer.js";
import { selectVisible } from "./select.js";
import { StreamDriver } from "./stream.js";

function wsUrl(): string {
  const param = new URLSearchParams(location.search).get("ws");
  if (param) return param;
  const proto = location.protocol === "https:" ? "wss:" : "ws:";
  return `${proto}//${location.host}/`;
}

function boot(): void {
  const canvas = document.getElementById("view") as HTMLCanvasElement;
  const hudEl = document.getElementById("hud")!;
  const banner = document.getElementById("banner")!;
  const gl = canvas.getContext("webgl2");
  if (!gl) {
    banner.textContent = "WebGL2 is not available in this browser";
    banner.classList.add("visible");
    return;
  }

  const fail = (text: string) => {
    banner.textContent = text;
    banner.classList.add("visible");
  };

  const url = wsUrl();
  const ws = new WebSocket(url);
  ws.binaryType = "arraybuffer";
  const driver = new StreamDriver(() => ws.close());
  ws.onmessage = (ev) => driver.push(ev.data as ArrayBuffer);
  ws.onerror = () => fail(`connection to ${url} failed`);
  ws.onclose = () => {
    if (driver.error) fail(`stream error: ${driver.error}`);
    else if (!driver.tree.done) fail("connection closed before end of stream");
  };

  const renderer = new PointRenderer(gl);
  const camera = new OrbitCamera();
  attachOrbitControls(canvas, camera);
  const hud = new Hud(hudEl);
  let framed = false;
  let showBoxes = false;

  window.addEventListener("keydown", (ev) => {
    if (ev.key === "b") showBoxes = !showBoxes;
    if (ev.key === "+" || ev.key === "=") renderer.pointSize = Math.min(8, renderer.pointSize + 1);
    if (ev.key === "-") renderer.pointSize = Math.max(1, renderer.pointSize - 1);
  });

  const tick = () => {
    driver.drain();
    const tree = driver.tree;
    if (!framed && tree.root) {
      camera.frame(tree.root.bounds);
      framed = true;
    }
    const dpr = window.devicePixelRatio || 1;
    const w = Math.max(1, Math.round(canvas.clientWidth * dpr));
    const h = Math.max(1, Math.round(canvas.clientHeight * dpr));
    if (canvas.width !== w || canvas.height !== h) {
      canvas.width = w;
      canvas.height = h;
    }
    const cam = camera.params(w, h);
    const selection = selectVisible(tree, cam);
    let samples = 0;
    for (const nid of selection) samples += tree.nodes.get(nid)?.count ?? 0;
    renderer.draw(tree, selection, cam, showBoxes);
    hud.update(tree, selection.length, samples);
    requestAnimationFrame(tick);
  };
  requestAnimationFrame(tick);
}

boot();
