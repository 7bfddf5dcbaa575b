// WebGL2 point renderer. Each node owns a GPU buffer that grows in
// chunk-sized increments and receives only the samples streamed since the
// last upload; a node whose samples were dropped (leaf turned inner) starts
// over via its generation counter.

import { basis, dot, tanHalfFov, cubeCorner, type CameraParams } from "./math.js";
import type { ClientNode, ClientTree } from "./tree.js";

const POINT_VS = `#version 300 es
layout(location = 0) in vec3 aPos;
layout(location = 1) in vec4 aColor;
uniform mat4 uViewProj;
uniform float uPointSize;
out vec4 vColor;
void main() {
  gl_Position = uViewProj * vec4(aPos, 1.0);
  gl_PointSize = uPointSize;
  vColor = aColor;
}`;

const POINT_FS = `#version 300 es
precision mediump float;
in vec4 vColor;
out vec4 outColor;
void main() { outColor = vec4(vColor.rgb, 1.0); }`;

const BOX_VS = `#version 300 es
layout(location = 0) in vec3 aPos;
uniform mat4 uViewProj;
void main() { gl_Position = uViewProj * vec4(aPos, 1.0); }`;

const BOX_FS = `#version 300 es
precision mediump float;
uniform vec4 uColor;
out vec4 outColor;
void main() { outColor = uColor; }`;

// Corner pairs differing in exactly one axis bit: the 12 cube edges.
const EDGES = [0, 1, 0, 2, 0, 4, 1, 3, 1, 5, 2, 3, 2, 6, 3, 7, 4, 5, 4, 6, 5, 7, 6, 7];

const RECORD_BYTES = 16;

function compile(gl: WebGL2RenderingContext, type: number, src: string): WebGLShader {
  const shader = gl.createShader(type)!;
  gl.shaderSource(shader, src);
  gl.compileShader(shader);
  if (!gl.getShaderParameter(shader, gl.COMPILE_STATUS)) {
    throw new Error(`shader: ${gl.getShaderInfoLog(shader)}`);
  }
  return shader;
}

function link(gl: WebGL2RenderingContext, vs: string, fs: string): WebGLProgram {
  const program = gl.createProgram()!;
  gl.attachShader(program, compile(gl, gl.VERTEX_SHADER, vs));
  gl.attachShader(program, compile(gl, gl.FRAGMENT_SHADER, fs));
  gl.linkProgram(program);
  if (!gl.getProgramParameter(program, gl.LINK_STATUS)) {
    throw new Error(`program: ${gl.getProgramInfoLog(program)}`);
  }
  return program;
}

export function viewProjMatrix(cam: CameraParams): Float32Array {
  const { right, up, forward } = basis(cam);
  const pos = cam.position;
  const f = 1 / tanHalfFov(cam);
  const aspect = cam.width / cam.height;
  const { near, far } = cam;
  // Column-major view matrix (eye looks down -z), then perspective on top.
  const v = [
    right[0], up[0], -forward[0], 0,
    right[1], up[1], -forward[1], 0,
    right[2], up[2], -forward[2], 0,
    -dot(right, pos), -dot(up, pos), dot(forward, pos), 1,
  ];
  const p = [
    f / aspect, 0, 0, 0,
    0, f, 0, 0,
    0, 0, (far + near) / (near - far), -1,
    0, 0, (2 * far * near) / (near - far), 0,
  ];
  const out = new Float32Array(16);
  for (let col = 0; col < 4; col++) {
    for (let row = 0; row < 4; row++) {
      let acc = 0;
      for (let k = 0; k < 4; k++) acc += p[k * 4 + row] * v[col * 4 + k];
      out[col * 4 + row] = acc;
    }
  }
  return out;
}

interface NodeBuffer {
  vao: WebGLVertexArrayObject;
  vbo: WebGLBuffer;
  capacity: number;
  uploaded: number;
  generation: number;
}

export class PointRenderer {
  pointSize = 2;
  private readonly gl: WebGL2RenderingContext;
  private readonly pointProgram: WebGLProgram;
  private readonly boxProgram: WebGLProgram;
  private readonly uViewProj: WebGLUniformLocation;
  private readonly uPointSize: WebGLUniformLocation;
  private readonly uBoxViewProj: WebGLUniformLocation;
  private readonly uBoxColor: WebGLUniformLocation;
  private readonly boxVao: WebGLVertexArrayObject;
  private readonly boxVbo: WebGLBuffer;
  private readonly buffers = new Map<number, NodeBuffer>();

  constructor(gl: WebGL2RenderingContext) {
    this.gl = gl;
    this.pointProgram = link(gl, POINT_VS, POINT_FS);
    this.boxProgram = link(gl, BOX_VS, BOX_FS);
    this.uViewProj = gl.getUniformLocation(this.pointProgram, "uViewProj")!;
    this.uPointSize = gl.getUniformLocation(this.pointProgram, "uPointSize")!;
    this.uBoxViewProj = gl.getUniformLocation(this.boxProgram, "uViewProj")!;
    this.uBoxColor = gl.getUniformLocation(this.boxProgram, "uColor")!;
    this.boxVao = gl.createVertexArray()!;
    this.boxVbo = gl.createBuffer()!;
    gl.bindVertexArray(this.boxVao);
    gl.bindBuffer(gl.ARRAY_BUFFER, this.boxVbo);
    gl.enableVertexAttribArray(0);
    gl.vertexAttribPointer(0, 3, gl.FLOAT, false, 12, 0);
    gl.bindVertexArray(null);
    gl.enable(gl.DEPTH_TEST);
  }

  private nodeBuffer(node: ClientNode): NodeBuffer {
    let state = this.buffers.get(node.id);
    if (!state) {
      const gl = this.gl;
      const vao = gl.createVertexArray()!;
      const vbo = gl.createBuffer()!;
      gl.bindVertexArray(vao);
      gl.bindBuffer(gl.ARRAY_BUFFER, vbo);
      gl.enableVertexAttribArray(0);
      gl.vertexAttribPointer(0, 3, gl.FLOAT, false, RECORD_BYTES, 0);
      gl.enableVertexAttribArray(1);
      gl.vertexAttribPointer(1, 4, gl.UNSIGNED_BYTE, true, RECORD_BYTES, 12);
      gl.bindVertexArray(null);
      state = { vao, vbo, capacity: 0, uploaded: 0, generation: node.generation };
      this.buffers.set(node.id, state);
    }
    return state;
  }

  private stage(node: ClientNode, from: number, to: number): ArrayBuffer {
    const n = to - from;
    const buf = new ArrayBuffer(n * RECORD_BYTES);
    const floats = new Float32Array(buf);
    const words = new Uint32Array(buf);
    for (let i = 0; i < n; i++) {
      const src = (from + i) * 3;
      floats[4 * i] = node.positions[src];
      floats[4 * i + 1] = node.positions[src + 1];
      floats[4 * i + 2] = node.positions[src + 2];
      words[4 * i + 3] = node.colors[from + i];
    }
    return buf;
  }

  private syncNode(node: ClientNode, chunkStep: number): NodeBuffer {
    const gl = this.gl;
    const state = this.nodeBuffer(node);
    if (state.generation !== node.generation) {
      state.generation = node.generation;
      state.uploaded = 0;
    }
    if (node.count <= state.uploaded) return state;
    gl.bindBuffer(gl.ARRAY_BUFFER, state.vbo);
    if (node.count > state.capacity) {
      state.capacity = Math.ceil(node.count / chunkStep) * chunkStep;
      gl.bufferData(gl.ARRAY_BUFFER, state.capacity * RECORD_BYTES, gl.DYNAMIC_DRAW);
      state.uploaded = 0;
    }
    gl.bufferSubData(
      gl.ARRAY_BUFFER,
      state.uploaded * RECORD_BYTES,
      this.stage(node, state.uploaded, node.count),
    );
    state.uploaded = node.count;
    return state;
  }

  draw(tree: ClientTree, selection: number[], cam: CameraParams, showBoxes: boolean): number {
    const gl = this.gl;
    const chunkStep = tree.hello ? Math.max(1, tree.hello.chunkCapacity) : 1;
    gl.viewport(0, 0, cam.width, cam.height);
    gl.clearColor(0.055, 0.06, 0.08, 1.0);
    gl.clear(gl.COLOR_BUFFER_BIT | gl.DEPTH_BUFFER_BIT);
    const matrix = viewProjMatrix(cam);
    gl.useProgram(this.pointProgram);
    gl.uniformMatrix4fv(this.uViewProj, false, matrix);
    gl.uniform1f(this.uPointSize, this.pointSize);
    let drawn = 0;
    for (const nid of selection) {
      const node = tree.nodes.get(nid);
      if (!node || node.count === 0) continue;
      const state = this.syncNode(node, chunkStep);
      gl.bindVertexArray(state.vao);
      gl.drawArrays(gl.POINTS, 0, node.count);
      drawn += node.count;
    }
    gl.bindVertexArray(null);
    if (showBoxes) this.drawBoxes(tree, selection, matrix);
    return drawn;
  }

  private drawBoxes(tree: ClientTree, selection: number[], matrix: Float32Array): void {
    const gl = this.gl;
    const verts = new Float32Array(selection.length * EDGES.length * 3);
    let at = 0;
    for (const nid of selection) {
      const node = tree.nodes.get(nid);
      if (!node) continue;
      for (const corner of EDGES) {
        const p = cubeCorner(node.bounds, corner);
        verts[at++] = p[0];
        verts[at++] = p[1];
        verts[at++] = p[2];
      }
    }
    gl.useProgram(this.boxProgram);
    gl.uniformMatrix4fv(this.uBoxViewProj, false, matrix);
    gl.uniform4f(this.uBoxColor, 1.0, 0.85, 0.2, 1.0);
    gl.bindVertexArray(this.boxVao);
    gl.bindBuffer(gl.ARRAY_BUFFER, this.boxVbo);
    gl.bufferData(gl.ARRAY_BUFFER, verts.subarray(0, at), gl.DYNAMIC_DRAW);
    gl.drawArrays(gl.LINES, 0, at / 3);
    gl.bindVertexArray(null);
  }
}
